"""Fairness-enhanced node classifier trained on the condensed graph.

Architecture: ``H0 = ReLU(BN(X W0))``, then ``L`` fusion layers
``H = LN(Dropout(ReLU(H W1 + Z W2 + b)))`` mixing node features with spectral
features ``Z``, then a one-hidden-layer MLP head with softmax output.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from . import spectral as spc
from .config import SpectralConfig, TrainConfig
from .errors import DimensionError, NumericError, StaleArtifactError
from .metrics import accuracy, delta_eo, delta_sp

logger = logging.getLogger(__name__)

BN_MOMENTUM = 0.1
BN_EPS = 1e-8
SPEC_PREFIX = "spec_"


@dataclass
class FairNetParams:
    weights: dict
    buffers: dict
    d_in: int
    num_classes: int
    hidden: int = 64
    layers: int = 2
    dropout: float = 0.5
    use_spectral: bool = True
    d_enc: int = 64
    heads: int = 4
    norm_eps: float = 1e-6

    def copy(self) -> "FairNetParams":
        return FairNetParams(
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.d_in, self.num_classes, self.hidden, self.layers, self.dropout,
            self.use_spectral, self.d_enc, self.heads, self.norm_eps,
        )

    def spectral_params(self) -> dict:
        n = len(SPEC_PREFIX)
        return {k[n:]: v for k, v in self.weights.items() if k.startswith(SPEC_PREFIX)}

    def hyperparameters(self) -> dict:
        return {"d_in": self.d_in, "num_classes": self.num_classes, "hidden": self.hidden,
                "layers": self.layers, "dropout": self.dropout, "use_spectral": self.use_spectral,
                "d_enc": self.d_enc, "heads": self.heads, "norm_eps": self.norm_eps}


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    selected_epoch: int | None = None
    selection_rule: str = ""

    COLUMNS = ("epoch", "loss", "lr", "acc", "delta_sp", "delta_eo", "phase")

    def lr_trace(self) -> list:
        return [r["lr"] for r in self.records]


def _unif(rng, fan_in, shape):
    b = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-b, b, size=shape)


def init_params(d_in: int, num_classes: int, train_cfg: TrainConfig | None = None,
                spectral_cfg: SpectralConfig | None = None, seed: int = 0) -> FairNetParams:
    t = train_cfg or TrainConfig()
    s = spectral_cfg or SpectralConfig()
    use_spectral = not t.disable_fairness
    rng = np.random.default_rng(seed)
    h = t.hidden
    w = {"enc_W0": _unif(rng, d_in, (d_in, h)), "enc_bn_g": np.ones(h), "enc_bn_b": np.zeros(h)}
    for l in range(1, t.layers + 1):
        w[f"ful{l}_W1"] = _unif(rng, h, (h, h))
        if use_spectral:
            w[f"ful{l}_W2"] = _unif(rng, s.d_enc, (s.d_enc, h))
        w[f"ful{l}_b"] = np.zeros(h)
        w[f"ful{l}_ln_g"] = np.ones(h)
        w[f"ful{l}_ln_b"] = np.zeros(h)
    w["head_W1"] = _unif(rng, h, (h, h))
    w["head_b1"] = np.zeros(h)
    w["head_W2"] = _unif(rng, h, (h, num_classes))
    w["head_b2"] = np.zeros(num_classes)
    if use_spectral:
        spec = spc.init_encoder_params(s.d_enc, int(rng.integers(2**31)))
        w.update({SPEC_PREFIX + k: v for k, v in spec.items()})
    buffers = {"bn_mean": np.zeros(h), "bn_var": np.ones(h)}
    return FairNetParams(w, buffers, d_in, num_classes, h, t.layers, t.dropout, use_spectral,
                         s.d_enc, s.heads, t.norm_eps)


def encode(x: np.ndarray, params: FairNetParams, train_mode: bool = False):
    """``ReLU(BN(X W0))``; batch statistics in train mode, running ones otherwise.
    Returns ``(H0, cache)``; train mode also updates the running statistics."""
    w = params.weights
    if x.ndim != 2 or x.shape[1] != w["enc_W0"].shape[0]:
        raise DimensionError(f"input width {x.shape[-1]} does not match encoder width {w['enc_W0'].shape[0]}")
    pre = x @ w["enc_W0"]
    if train_mode:
        bn, bn_cache, (mu, var) = nk.batch_norm_train(pre, w["enc_bn_g"], w["enc_bn_b"], BN_EPS)
        b = params.buffers
        b["bn_mean"] = (1 - BN_MOMENTUM) * b["bn_mean"] + BN_MOMENTUM * mu
        b["bn_var"] = (1 - BN_MOMENTUM) * b["bn_var"] + BN_MOMENTUM * var
    else:
        bn = nk.batch_norm_eval(pre, w["enc_bn_g"], w["enc_bn_b"], params.buffers["bn_mean"],
                                params.buffers["bn_var"], BN_EPS)
        bn_cache = None
    return nk.relu(bn), (x, bn, bn_cache)


def fulayer_forward(h_prev, z, l: int, params: FairNetParams, train_mode: bool = False,
                    rng: np.random.Generator | None = None, mask=None):
    """One fusion layer. ``z=None`` (or a model without spectral weights) drops
    the spectral term. Returns ``(H, cache)``."""
    w = params.weights
    pre = h_prev @ w[f"ful{l}_W1"] + w[f"ful{l}_b"]
    use_z = z is not None and f"ful{l}_W2" in w
    if use_z:
        pre = pre + z @ w[f"ful{l}_W2"]
    act = nk.relu(pre)
    if train_mode and params.dropout > 0:
        if mask is None:
            mask = nk.dropout_mask(act.shape, params.dropout, rng or np.random.default_rng(0))
        dropped = act * mask
    else:
        mask = None
        dropped = act
    out, ln_cache = nk.layer_norm(dropped, w[f"ful{l}_ln_g"], w[f"ful{l}_ln_b"], params.norm_eps)
    return out, (h_prev, z if use_z else None, pre, mask, ln_cache)


def forward(x, z, params: FairNetParams, train_mode: bool = False, rng=None, masks=None):
    """Logits for the rows of ``x``. ``masks`` pins the dropout masks per layer."""
    w = params.weights
    h, enc_cache = encode(x, params, train_mode)
    layer_caches = []
    for l in range(1, params.layers + 1):
        m = None if masks is None else masks[l - 1]
        h, c = fulayer_forward(h, z, l, params, train_mode, rng, m)
        layer_caches.append(c)
    hp = h @ w["head_W1"] + w["head_b1"]
    hh = nk.relu(hp)
    logits = hh @ w["head_W2"] + w["head_b2"]
    return logits, (enc_cache, layer_caches, h, hp, hh, train_mode)


def backward(dlogits, cache, params: FairNetParams):
    """Gradients of all non-spectral weights, plus ``dL/dZ`` (``None`` when the
    spectral term was not used)."""
    w = params.weights
    enc_cache, layer_caches, h_last, hp, hh, train_mode = cache
    g = {"head_W2": hh.T @ dlogits, "head_b2": dlogits.sum(axis=0)}
    dhp = nk.relu_backward(dlogits @ w["head_W2"].T, hp)
    g["head_W1"] = h_last.T @ dhp
    g["head_b1"] = dhp.sum(axis=0)
    dh = dhp @ w["head_W1"].T
    dz = None
    for l in range(params.layers, 0, -1):
        h_prev, z, pre, mask, ln_cache = layer_caches[l - 1]
        dd, g[f"ful{l}_ln_g"], g[f"ful{l}_ln_b"] = nk.layer_norm_backward(dh, ln_cache)
        da = dd * mask if mask is not None else dd
        dpre = nk.relu_backward(da, pre)
        g[f"ful{l}_W1"] = h_prev.T @ dpre
        g[f"ful{l}_b"] = dpre.sum(axis=0)
        if z is not None:
            g[f"ful{l}_W2"] = z.T @ dpre
            contrib = dpre @ w[f"ful{l}_W2"].T
            dz = contrib if dz is None else dz + contrib
        elif f"ful{l}_W2" in w:
            g[f"ful{l}_W2"] = np.zeros_like(w[f"ful{l}_W2"])
        dh = dpre @ w[f"ful{l}_W1"].T
    x, bn, bn_cache = enc_cache
    dbn = nk.relu_backward(dh, bn)
    if not train_mode:
        # eval-mode BN is an affine map with frozen statistics
        rstd = 1.0 / np.sqrt(params.buffers["bn_var"] + BN_EPS)
        xhat = (x @ w["enc_W0"] - params.buffers["bn_mean"]) * rstd
        g["enc_bn_g"] = (dbn * xhat).sum(axis=0)
        g["enc_bn_b"] = dbn.sum(axis=0)
        dpre = dbn * w["enc_bn_g"] * rstd
    else:
        dpre, g["enc_bn_g"], g["enc_bn_b"] = nk.batch_norm_backward(dbn, bn_cache)
    g["enc_W0"] = x.T @ dpre
    return g, dz


def smooth_labels(y_onehot: np.ndarray, eps: float, num_classes: int) -> np.ndarray:
    """``(1 - eps) * onehot + eps / C``, with the true-class entry nudged by a
    few ulps so the exact sum of every stored row is 1."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {eps}")
    off = eps / num_classes
    on = 1.0 - (num_classes - 1) * off
    rest = [off] * (num_classes - 1)
    for _ in range(8):
        total = math.fsum([on, *rest])
        if total == 1.0:
            break
        on = np.nextafter(on, -np.inf if total > 1.0 else np.inf)
    y = np.asarray(y_onehot, dtype=float)
    return np.where(y > 0, on, off)


def epoch_targets(y_onehot, epoch: int, cfg: TrainConfig, num_classes: int) -> tuple:
    """Targets for a 1-based epoch: smoothed during the curriculum, hard after."""
    if not cfg.disable_fairness and epoch <= cfg.curriculum_epochs:
        return smooth_labels(y_onehot, cfg.smoothing, num_classes), "smoothed"
    return y_onehot, "hard"


def predict(x, params: FairNetParams, z=None) -> np.ndarray:
    """Class probabilities in eval mode. Nodes outside the condensed graph have no
    spectral coordinates, so ``z`` defaults to the zero matrix."""
    logits, _ = forward(np.asarray(x, dtype=float), z, params, train_mode=False)
    return nk.rowwise_softmax(logits)


def select_epoch(records: list, cfg: TrainConfig) -> tuple:
    """Model selection over the per-epoch validation records.

    Plain rule: first epoch with the best validation accuracy. Fairness guard:
    among epochs whose accuracy is within ``selection_margin`` of the best, find
    the lowest ``delta_sp + delta_eo``; keep the epochs within
    ``fairness_envelope`` times that value and pick the most accurate of them.
    """
    scored = [r for r in records if r.get("acc") is not None]
    if not scored:
        return records[-1]["epoch"], "last"
    best_acc = max(r["acc"] for r in scored)
    if cfg.disable_fairness:
        return next(r["epoch"] for r in scored if r["acc"] == best_acc), "best_val_acc"
    pool = [r for r in scored if r["acc"] >= best_acc - cfg.selection_margin - 1e-12]
    fair = [r["delta_sp"] + r["delta_eo"] for r in pool]
    envelope = cfg.fairness_envelope * min(fair) + 1e-12
    eligible = [r for r, f in zip(pool, fair) if f <= envelope]
    top = max(r["acc"] for r in eligible)
    return next(r["epoch"] for r in eligible if r["acc"] == top), "fairness_guarded"


def check_consistency(cg, basis) -> None:
    if basis is None:
        return
    if basis.num_nodes != cg.num_syn:
        raise StaleArtifactError(f"spectral basis covers {basis.num_nodes} nodes, condensed graph has {cg.num_syn}")
    want = cg.metadata.get("content_hash")
    have = getattr(basis, "source_hash", None)
    if want and have and want != have:
        raise StaleArtifactError("spectral basis was computed for a different condensed graph")


def train(cg, basis, params: FairNetParams, cfg: TrainConfig, seed: int = 0, val=None,
          positive_class: int = 1, group_partition=None, frozen_spectral: bool = False):
    """Fit ``params`` on the condensed graph with AdamW and a cosine schedule.

    ``val`` is an optional ``(X, y, s)`` triple of original-graph nodes, already
    mapped into the condensed feature space, used for monitoring and model
    selection. Returns ``(best_params, TrainLog)``.
    """
    check_consistency(cg, basis)
    params = params.copy()
    x = np.asarray(cg.features, dtype=float)
    y1h = nk.one_hot(cg.labels, params.num_classes)
    use_spec = params.use_spectral and basis is not None
    train_spec = use_spec and not frozen_spectral
    state = nk.OptimizerState(lr=cfg.lr_max, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps,
                              weight_decay=cfg.weight_decay)
    log = TrainLog()
    snapshots = {}
    best_acc = -1.0
    z_fixed = None
    if use_spec and frozen_spectral:
        z_fixed, _ = spc.spectral_features(basis, params.spectral_params(), params.heads, params.norm_eps)
    for epoch in range(1, cfg.epochs + 1):
        state.lr = nk.cosine_lr(epoch - 1, cfg.epochs, cfg.lr_max, cfg.lr_min)
        rng = np.random.default_rng([seed, epoch])
        z = z_fixed
        if train_spec:
            sp_params = params.spectral_params()
            z, z_cache = spc.spectral_features(basis, sp_params, params.heads, params.norm_eps)
        targets, phase = epoch_targets(y1h, epoch, cfg, params.num_classes)
        logits, cache = forward(x, z, params, train_mode=True, rng=rng)
        loss, dlogits = nk.soft_cross_entropy(logits, targets)
        if not math.isfinite(loss):
            raise NumericError(f"training loss is not finite at epoch {epoch}")
        grads, dz = backward(dlogits, cache, params)
        if train_spec and dz is not None:
            sgrads = spc.spectral_features_backward(dz, basis, z_cache, sp_params)
            grads.update({SPEC_PREFIX + k: v for k, v in sgrads.items()})
        nk.adamw_step(params.weights, grads, state)
        rec = {"epoch": epoch, "loss": loss, "lr": state.lr, "acc": None, "delta_sp": None,
               "delta_eo": None, "phase": phase}
        if val is not None:
            vx, vy, vs = val
            pred = predict(vx, params).argmax(axis=1)
            rec["acc"] = accuracy(pred, vy)
            rec["delta_sp"] = delta_sp(pred, vs, positive_class, group_partition)
            rec["delta_eo"] = delta_eo(pred, vy, vs, positive_class, group_partition)
            best_acc = max(best_acc, rec["acc"])
            # only epochs that can still enter the selection pool are kept
            floor = best_acc - (0.0 if cfg.disable_fairness else cfg.selection_margin) - 1e-12
            snapshots[epoch] = (rec["acc"], params.copy())
            snapshots = {e: v for e, v in snapshots.items() if v[0] >= floor}
        log.records.append(rec)
    if val is None:
        log.selected_epoch, log.selection_rule = cfg.epochs, "last"
        return params, log
    log.selected_epoch, log.selection_rule = select_epoch(log.records, cfg)
    return snapshots[log.selected_epoch][1], log
