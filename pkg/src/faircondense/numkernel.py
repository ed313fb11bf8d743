"""Dense numeric kernel: layer primitives with hand-written backward passes,
a cyclic Jacobi eigensolver, Adam/AdamW, cosine schedule and a gradient checker.

Matrices are plain ``numpy.ndarray`` objects in float64. Forward functions that
need a backward pass return ``(out, cache)``; the matching ``*_backward`` takes
the upstream gradient and that cache.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DimensionError, NumericError

DTYPE = np.float64


def as_matrix(x, name="input") -> np.ndarray:
    """Coerce to a finite 2-D float array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D array, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# elementwise / algebra
# ---------------------------------------------------------------------------


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def scale(a: np.ndarray, alpha: float) -> np.ndarray:
    return alpha * a


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def rowwise_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_backward(dout: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Backward of row-wise softmax given its output."""
    return probs * (dout - (dout * probs).sum(axis=1, keepdims=True))


def soft_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy against (possibly soft) target rows.

    Returns ``(loss, dlogits)``. With one-hot targets this is the usual NLL of
    the log-softmax output.
    """
    if logits.shape != targets.shape:
        raise DimensionError(f"targets {targets.shape} do not match logits {logits.shape}")
    n = logits.shape[0]
    logp = log_softmax(logits)
    # row sums first, so one-hot targets give exactly -sum(logp[i, y_i]) / n
    loss = -float(np.sum(np.sum(targets * logp, axis=1))) / n
    probs = np.exp(logp)
    dlogits = (probs * targets.sum(axis=1, keepdims=True) - targets) / n
    return loss, dlogits


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes), dtype=DTYPE)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6):
    """Normalize each row to zero mean / unit variance, then apply ``gamma, beta``."""
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError("layer_norm: affine parameters must match row width")
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * gamma + beta, (xhat, rstd, gamma)


def layer_norm_backward(dout: np.ndarray, cache):
    xhat, rstd, gamma = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    m = xhat.shape[1]
    dx = rstd / m * (
        m * dxhat
        - dxhat.sum(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
    )
    return dx, dgamma, dbeta


def batch_norm_train(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-8):
    """Column-wise normalization over the batch. Also returns the batch moments
    so the caller can update running statistics."""
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError("batch_norm: affine parameters must match column count")
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * gamma + beta, (xhat, rstd, gamma), (mu, var)


def batch_norm_eval(x, gamma, beta, running_mean, running_var, eps: float = 1e-8):
    return (x - running_mean) / np.sqrt(running_var + eps) * gamma + beta


def batch_norm_backward(dout: np.ndarray, cache):
    xhat, rstd, gamma = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    n = xhat.shape[0]
    dx = rstd / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: kept units are scaled by ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=DTYPE)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# ---------------------------------------------------------------------------
# symmetric eigensolver
# ---------------------------------------------------------------------------


def sym_eigen(m, k: int | None = None, which: str = "smallest", *, sym_tol: float = 1e-8,
              max_sweeps: int = 100):
    """Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    The full spectrum is computed and then ``k`` pairs are selected: ascending
    for ``which="smallest"``, descending for ``"largest"``. Eigenvectors are
    the columns of the returned matrix.
    """
    a = np.array(m, dtype=DTYPE, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"sym_eigen: expected a square matrix, got {a.shape}")
    check_finite(a, "sym_eigen input")
    n = a.shape[0]
    if k is None:
        k = n
    if not 1 <= k <= n:
        raise ValueError(f"sym_eigen: k must be in [1, {n}], got {k}")
    if which not in ("smallest", "largest"):
        raise ValueError(f"sym_eigen: which must be 'smallest' or 'largest', got {which!r}")
    asym = np.max(np.abs(a - a.T)) if n else 0.0
    if asym > sym_tol * max(1.0, np.max(np.abs(a))):
        raise ValueError(f"sym_eigen: matrix not symmetric (max |M - M^T| = {asym:.3e})")
    a = 0.5 * (a + a.T)
    v = np.eye(n, dtype=DTYPE)

    scale_ = float(np.linalg.norm(a))
    eps = np.finfo(DTYPE).eps
    skip = eps * scale_ / max(n, 1)
    converged = n < 2 or scale_ == 0.0
    off = 0.0
    for _ in range(max_sweeps):
        if converged:
            break
        rotations = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                rotations += 1
                app, aqq = a[p, p], a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                new_p = c * col_p - s * col_q
                new_q = s * col_p + c * col_q
                a[:, p] = new_p
                a[:, q] = new_q
                a[p, :] = new_p
                a[q, :] = new_q
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if rotations == 0 or off <= eps * scale_:
            converged = True
    if not converged:
        raise ConvergenceError(
            f"Jacobi did not converge after {max_sweeps} sweeps (off-diagonal norm {off:.3e})",
            residual=off,
        )
    evals = np.diag(a).copy()
    order = np.argsort(evals, kind="stable")
    if which == "largest":
        order = order[::-1]
    order = order[:k]
    return evals[order], v[:, order]


# ---------------------------------------------------------------------------
# optimizers and schedule
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float | None = None
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads: dict, clip_norm: float) -> dict:
    norm = global_norm(grads)
    if norm <= clip_norm or norm == 0.0:
        return grads
    factor = clip_norm / norm
    return {k: g * factor for k, g in grads.items()}


def _check_grads(params: dict, grads: dict) -> None:
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape "
                                 f"{params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {name!r}")


def _moment_update(params, grads, state, decoupled_decay):
    state.step += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        if decoupled_decay and state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def adam_step(params: dict, grads: dict, state: OptimizerState) -> None:
    """In-place Adam update with global-norm gradient clipping applied first."""
    _check_grads(params, grads)
    if state.clip_norm is None or state.clip_norm <= 0:
        raise ValueError("adam_step requires clip_norm > 0")
    grads = clip_by_global_norm(grads, state.clip_norm)
    _moment_update(params, grads, state, decoupled_decay=False)


def adamw_step(params: dict, grads: dict, state: OptimizerState) -> None:
    """In-place AdamW update (decoupled weight decay scaled by the current lr)."""
    _check_grads(params, grads)
    if state.clip_norm:
        grads = clip_by_global_norm(grads, state.clip_norm)
    _moment_update(params, grads, state, decoupled_decay=True)


def cosine_lr(t: float, total: int, lr_max: float, lr_min: float) -> float:
    if total < 1:
        raise ValueError("cosine_lr: total must be >= 1")
    if t < 0:
        raise ValueError("cosine_lr: step must be >= 0")
    if t >= total:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[np.ndarray], float], params: np.ndarray, analytic: np.ndarray,
               epsilon: float = 1e-5, floor: float = 1e-6):
    """Compare ``analytic`` against central differences of ``f`` at ``params``.

    ``f`` is evaluated with ``params`` perturbed in place (restored afterwards).
    Returns ``(max_relative_error, flat_index)``; the relative error of each
    coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-7, 1e-4]")
    flat = params.reshape(-1)
    ana = np.asarray(analytic, dtype=DTYPE).reshape(-1)
    worst, worst_idx = 0.0, -1
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = f(params)
        flat[i] = orig - epsilon
        fm = f(params)
        flat[i] = orig
        num = (fp - fm) / (2.0 * epsilon)
        err = abs(ana[i] - num) / max(abs(ana[i]), abs(num), floor)
        if err > worst:
            worst, worst_idx = err, i
    return worst, worst_idx
