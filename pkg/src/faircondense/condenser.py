"""Distribution-preserving condensation: budget, attribute allocation, feature
initialisation, proxy-network distillation and kNN structure reconstruction."""

from __future__ import annotations

import logging
import math
from decimal import Decimal
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import numkernel as nk
from .config import CondenseConfig
from .errors import ConfigError, DataError, NumericError
from .graph_core import DistributionStats, Graph, empirical_stats

logger = logging.getLogger(__name__)

ZSCORE_EPS = 1e-8
NORM_FLOOR = 1e-12
MIN_SYN = 10


@dataclass
class CondensedGraph:
    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    adjacency: np.ndarray | sp.csr_matrix
    num_classes: int
    num_groups: int
    metadata: dict = field(default_factory=dict)

    @property
    def num_syn(self) -> int:
        return int(self.features.shape[0])

    def dense_adjacency(self) -> np.ndarray:
        if sp.issparse(self.adjacency):
            return self.adjacency.toarray()
        return np.asarray(self.adjacency)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        """Map original-graph features into the condensed feature space."""
        mu = np.asarray(self.metadata["feature_mu"])
        sigma = np.asarray(self.metadata["feature_sigma"])
        return (np.asarray(x, dtype=float) - mu) / (sigma + ZSCORE_EPS)


@dataclass
class ProxyNet:
    params: dict

    @property
    def hidden(self) -> int:
        return self.params["W1"].shape[1]

    @classmethod
    def init(cls, d: int, hidden: int, num_classes: int, seed: int) -> "ProxyNet":
        rng = np.random.default_rng(seed)
        b1 = 1.0 / math.sqrt(d)
        b2 = 1.0 / math.sqrt(hidden)
        return cls({
            "W1": rng.uniform(-b1, b1, size=(d, hidden)),
            "b1": np.zeros(hidden),
            "W2": rng.uniform(-b2, b2, size=(hidden, num_classes)),
            "b2": np.zeros(num_classes),
        })

    def log_probs(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        h = nk.relu(x @ p["W1"] + p["b1"])
        return nk.log_softmax(h @ p["W2"] + p["b2"])


def compute_budget(n: int, rho: float) -> int:
    if not 0.0 < rho < 1.0:
        raise ConfigError(f"compression ratio must lie in (0, 1), got {rho}")
    if n < 1:
        raise ConfigError(f"graph must have at least one node, got n={n}")
    # floor on the decimal value of rho: 0.29 * 100 is 28.999... in binary floating point
    return max(MIN_SYN, math.floor(Decimal(repr(float(rho))) * n))


def largest_remainder(quotas, rng: np.random.Generator | None = None) -> np.ndarray:
    """Integer apportionment of ``quotas`` preserving their (rounded) total.

    Every entry receives ``floor(quota)`` and the leftover units go one each to
    entries with a fractional part. With ``rng`` the leftovers are drawn without
    replacement with probability proportional to the fractional parts; without
    it they go to the largest fractional parts (lowest index on ties).
    """
    q = np.asarray(quotas, dtype=float)
    base = np.floor(q + 1e-12).astype(np.int64)
    frac = np.clip(q - base, 0.0, None)
    leftover = int(round(q.sum())) - int(base.sum())
    if leftover <= 0:
        return base
    candidates = np.flatnonzero(frac > 1e-12)
    if rng is None or candidates.size < leftover:
        order = np.lexsort((np.arange(q.size), -frac))
        picks = order[:leftover]
    else:
        w = frac[candidates] / frac[candidates].sum()
        picks = rng.choice(candidates, size=leftover, replace=False, p=w)
    base[picks] += 1
    return base


def _repair_columns(cells: np.ndarray, targets: np.ndarray, col_totals: np.ndarray) -> np.ndarray:
    """Move units within rows until column sums equal ``col_totals``; each move
    is the one that least increases total deviation from ``targets``."""
    cells = cells.copy()
    while True:
        diff = cells.sum(axis=0) - col_totals
        over = np.flatnonzero(diff > 0)
        under = np.flatnonzero(diff < 0)
        if over.size == 0:
            return cells
        best = None
        for a in over:
            for b in under:
                for c in range(cells.shape[0]):
                    if cells[c, a] == 0:
                        continue
                    cost = (abs(cells[c, a] - 1 - targets[c, a]) - abs(cells[c, a] - targets[c, a])
                            + abs(cells[c, b] + 1 - targets[c, b]) - abs(cells[c, b] - targets[c, b]))
                    if targets[c, b] == 0:
                        cost += 1e6
                    key = (cost, c, a, b)
                    if best is None or key < best:
                        best = key
        _, c, a, b = best
        cells[c, a] -= 1
        cells[c, b] += 1


def allocate_attributes(stats: DistributionStats, n_syn: int, seed: int, mode: str = "marginal"):
    """Synthetic labels and sensitive values matching the source proportions.

    Returns ``(labels, sensitive, info)``. In ``joint`` mode the (class, group)
    table follows the class-conditional group distribution; in ``marginal`` mode
    groups are assigned independently of labels. Either way the class and group
    counts are roundings of ``n_syn * p_c`` and ``n_syn * q_a``.
    """
    if n_syn < 1:
        raise ValueError("n_syn must be >= 1")
    if mode not in ("joint", "marginal"):
        raise ValueError(f"unknown allocation mode {mode!r}")
    rng = np.random.default_rng(seed)
    p, q, joint = stats.class_props, stats.group_props, stats.joint_props
    class_counts = largest_remainder(n_syn * p, rng)
    group_counts = largest_remainder(n_syn * q, rng)

    if mode == "joint":
        cond = np.divide(joint, p[:, None], out=np.zeros_like(joint), where=p[:, None] > 0)
        targets = class_counts[:, None] * cond
        cells = np.stack([largest_remainder(t, rng) for t in targets])
        cells = _repair_columns(cells, targets, group_counts)
        labels = np.repeat(np.repeat(np.arange(len(p)), len(q)), cells.ravel())
        sensitive = np.repeat(np.tile(np.arange(len(q)), len(p)), cells.ravel())
    else:
        labels = np.repeat(np.arange(len(p)), class_counts)
        sensitive = rng.permutation(np.repeat(np.arange(len(q)), group_counts))
        cells = np.zeros_like(joint, dtype=np.int64)
        np.add.at(cells, (labels, sensitive), 1)

    order = rng.permutation(n_syn)
    labels, sensitive = labels[order], sensitive[order]
    info = {
        "mode": mode,
        "class_counts": class_counts.tolist(),
        "group_counts": group_counts.tolist(),
        "joint_counts": cells.tolist(),
    }
    empty = [int(c) for c in np.flatnonzero(class_counts == 0)]
    if empty:
        info["empty_classes"] = empty
    return labels, sensitive, info


def init_features(g: Graph, labels, sensitive, seed: int):
    """Stratified sample of real training nodes, Z-scored over the sampled block.

    Returns ``(X0, info)`` where ``info`` carries the sampled node ids and the
    per-feature mean/std used for normalisation.
    """
    labels = np.asarray(labels)
    sensitive = np.asarray(sensitive)
    rng = np.random.default_rng(seed)
    train = g.train
    if train.size == 0:
        raise DataError("init_features: training split is empty")
    ids = np.empty(labels.size, dtype=np.int64)
    fallbacks = []
    for c in np.unique(labels):
        for a in np.unique(sensitive[labels == c]):
            slots = np.flatnonzero((labels == c) & (sensitive == a))
            pool = train[(g.labels[train] == c) & (g.sensitive[train] == a)]
            if pool.size == 0:
                pool = train[g.labels[train] == c]
                fallbacks.append([int(c), int(a)])
                if pool.size == 0:
                    raise DataError(f"no training node has class {c}")
            if slots.size <= pool.size:
                chosen = rng.choice(pool, size=slots.size, replace=False)
            else:
                chosen = np.concatenate([rng.permutation(pool),
                                         rng.choice(pool, size=slots.size - pool.size, replace=True)])
            ids[slots] = chosen
    block = g.features[ids]
    mu = block.mean(axis=0)
    sigma = block.std(axis=0)
    x0 = (block - mu) / (sigma + ZSCORE_EPS)
    info = {"sampled_ids": ids.tolist(), "feature_mu": mu.tolist(), "feature_sigma": sigma.tolist()}
    if fallbacks:
        info["fallback_cells"] = fallbacks
    return x0, info


def cond_loss(x: np.ndarray, labels: np.ndarray, params: dict):
    """Proxy NLL on the synthetic nodes and its gradient w.r.t. ``x`` and the proxy."""
    pre = x @ params["W1"] + params["b1"]
    h = nk.relu(pre)
    logits = h @ params["W2"] + params["b2"]
    loss, dlogits = nk.soft_cross_entropy(logits, nk.one_hot(labels, logits.shape[1]))
    dh = dlogits @ params["W2"].T
    dpre = nk.relu_backward(dh, pre)
    grads = {
        "X": dpre @ params["W1"].T,
        "W1": x.T @ dpre,
        "b1": dpre.sum(axis=0),
        "W2": h.T @ dlogits,
        "b2": dlogits.sum(axis=0),
    }
    return loss, grads


def distill_features(x0, labels, proxy: ProxyNet, steps: int = 200, lr: float = 0.01,
                     clip: float = 1.0, betas=(0.9, 0.999), eps: float = 1e-8):
    """Jointly optimise synthetic features and the proxy MLP with clipped Adam.

    Returns ``(X, trace)`` where ``X`` is the iterate with the lowest recorded
    loss and ``trace`` the loss at every evaluated iterate (``steps + 1`` values).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    num_classes = proxy.params["W2"].shape[1]
    if num_classes < 1 or labels.size == 0:
        raise DataError("distillation needs at least one class and one synthetic node")
    params = {"X": np.array(x0, dtype=float, copy=True)}
    params.update({k: v.copy() for k, v in proxy.params.items()})
    state = nk.OptimizerState(lr=lr, betas=tuple(betas), eps=eps, clip_norm=clip)
    trace = []
    best_loss, best_x = math.inf, params["X"].copy()
    for step in range(steps + 1):
        loss, grads = cond_loss(params["X"], labels, params)
        if not math.isfinite(loss):
            raise NumericError(f"condensation loss is not finite at step {step}")
        trace.append(loss)
        if loss < best_loss:
            best_loss, best_x = loss, params["X"].copy()
        if step == steps:
            break
        nk.adam_step(params, grads, state)
    for k in proxy.params:
        proxy.params[k] = params[k]
    return best_x, trace


def _knn_pairs(xn: np.ndarray, k: int, block_rows: int):
    """Top-``k`` cosine neighbours of every row (self excluded, ties to the
    lower index). Yields ``(rows, cols, sims)`` per row block."""
    n = xn.shape[0]
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        sims = xn[start:stop] @ xn.T
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
        rows = np.repeat(np.arange(start, stop), k)
        cols = order.ravel()
        yield rows, cols, sims[rows - start, cols]


def build_adjacency(x, k_sparse: int = 5, k_dense: int = 10, sparse_threshold: int = 20000,
                    block_rows: int = 1024):
    """Symmetrised cosine kNN graph over the rows of ``x``.

    Above ``sparse_threshold`` nodes the result is a CSR matrix built with
    ``k_sparse`` neighbours; otherwise a dense array with ``k_dense``. Edge
    weights are ``max(0, cosine)``; the diagonal is zero.
    Returns ``(adjacency, info)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    sparse_track = n > sparse_threshold
    k = k_sparse if sparse_track else k_dense
    info = {"track": "sparse" if sparse_track else "dense", "k_requested": int(k)}
    if k >= n:
        logger.warning("k=%d >= n_syn=%d; clamping to %d", k, n, n - 1)
        info["warning"] = f"k={k} clamped to {n - 1}"
        k = n - 1
    info["k"] = int(k)
    norms = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), NORM_FLOOR)
    xn = x / norms
    rows, cols, vals = [], [], []
    if k > 0:
        for r, c, v in _knn_pairs(xn, k, block_rows):
            rows.append(r)
            cols.append(c)
            vals.append(v)
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.maximum(np.concatenate(vals), 0.0)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    # union symmetrisation; one canonical weight per unordered pair
    u, w = np.minimum(r, c), np.maximum(r, c)
    order = np.lexsort((-v, w, u))
    u, w, v = u[order], w[order], v[order]
    keep = np.ones(u.size, dtype=bool)
    keep[1:] = (u[1:] != u[:-1]) | (w[1:] != w[:-1])
    u, w, v = u[keep], w[keep], v[keep]
    if sparse_track:
        adj = sp.coo_matrix((np.concatenate([v, v]), (np.concatenate([u, w]), np.concatenate([w, u]))),
                            shape=(n, n)).tocsr()
        adj.eliminate_zeros()
        adj.sort_indices()
    else:
        adj = np.zeros((n, n))
        adj[u, w] = v
        adj[w, u] = v
    return adj, info


def default_k_dense(g: Graph) -> int:
    return max(10, math.ceil(g.mean_degree))


def condense(g: Graph, cfg: CondenseConfig, seed: int) -> CondensedGraph:
    """Run the whole condensation phase on the training split of ``g``."""
    n_syn = compute_budget(g.num_nodes, cfg.rho)
    stats = empirical_stats(g)
    k_dense = cfg.k_dense or default_k_dense(g)
    meta = {"seed": int(seed), "rho": float(cfg.rho), "n_syn": n_syn, "source_stats": stats.to_dict(),
            "source_num_nodes": g.num_nodes}
    if cfg.random_coreset:
        rng = np.random.default_rng(seed)
        if n_syn > g.train.size:
            raise DataError(f"random coreset needs {n_syn} training nodes, split has {g.train.size}")
        ids = np.sort(rng.choice(g.train, size=n_syn, replace=False))
        labels, sensitive = g.labels[ids], g.sensitive[ids]
        block = g.features[ids]
        mu, sigma = block.mean(axis=0), block.std(axis=0)
        x = (block - mu) / (sigma + ZSCORE_EPS)
        meta.update({"method": "random_coreset", "sampled_ids": ids.tolist(),
                     "feature_mu": mu.tolist(), "feature_sigma": sigma.tolist()})
    else:
        labels, sensitive, alloc = allocate_attributes(stats, n_syn, seed, cfg.allocation)
        x0, init = init_features(g, labels, sensitive, seed + 1)
        proxy = ProxyNet.init(g.num_features, cfg.proxy_hidden, g.num_classes, seed + 2)
        x, trace = distill_features(x0, labels, proxy, cfg.proxy_steps, cfg.proxy_lr, cfg.proxy_clip,
                                    (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps)
        meta.update({"method": "distribution_preserving", "allocation": alloc, **init,
                     "proxy_loss_trace": trace})
    adj, knn = build_adjacency(x, cfg.k_sparse, k_dense, cfg.sparse_threshold)
    meta["knn"] = knn
    return CondensedGraph(x, np.asarray(labels, dtype=np.int64), np.asarray(sensitive, dtype=np.int64),
                          adj, g.num_classes, g.num_groups, meta)
