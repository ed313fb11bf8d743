"""Spectral positional features for the condensed graph.

Pipeline: normalized Laplacian -> low-frequency eigenpairs -> sinusoidal
eigenvalue encoding -> one post-norm attention block over the K frequency
tokens -> projection back to nodes through the eigenvectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import numkernel as nk
from .errors import DimensionError, NumericError


@dataclass
class SpectralBasis:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # n_syn x K
    laplacian_residual: float
    which: str = "smallest"

    @property
    def k(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def num_nodes(self) -> int:
        return int(self.eigenvectors.shape[0])


def normalized_laplacian(adj) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2``. Isolated nodes get a unit self-loop first, so
    their row of the Laplacian is zero."""
    a = adj.toarray() if sp.issparse(adj) else np.array(adj, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-12:
        raise ValueError("adjacency is not symmetric")
    if np.any(a < 0):
        raise ValueError("adjacency has negative weights")
    deg = a.sum(axis=1)
    isolated = deg <= 0
    a[isolated, isolated] = 1.0
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(a.shape[0]) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


def canonicalize_signs(u: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry (first on ties) is positive."""
    if u.size == 0:
        return u
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def spectral_basis(lap: np.ndarray, k: int, which: str = "smallest") -> SpectralBasis:
    n = lap.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"number of spectral components must lie in [1, {n}], got {k}")
    evals, evecs = nk.sym_eigen(lap, k, which)
    evecs = canonicalize_signs(evecs)
    resid = float(np.max(np.abs(lap @ evecs - evecs * evals), initial=0.0))
    return SpectralBasis(evals, evecs, resid, which)


def sinusoidal_encode(eigenvalues, d_enc: int) -> np.ndarray:
    if d_enc % 2:
        raise ValueError(f"encoding width must be even, got {d_enc}")
    lam = np.asarray(eigenvalues, dtype=float).reshape(-1, 1)
    freq = 10000.0 ** (2.0 * np.arange(d_enc // 2) / d_enc)
    angles = lam / freq
    out = np.empty((lam.shape[0], d_enc))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def init_encoder_params(d_enc: int, seed: int, expansion: int = 4) -> dict:
    rng = np.random.default_rng(seed)
    hidden = expansion * d_enc

    def unif(fan_in, shape):
        b = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    return {
        "attn_Wq": unif(d_enc, (d_enc, d_enc)),
        "attn_Wk": unif(d_enc, (d_enc, d_enc)),
        "attn_Wv": unif(d_enc, (d_enc, d_enc)),
        "attn_Wo": unif(d_enc, (d_enc, d_enc)),
        "ln1_g": np.ones(d_enc),
        "ln1_b": np.zeros(d_enc),
        "ffn_W1": unif(d_enc, (d_enc, hidden)),
        "ffn_b1": np.zeros(hidden),
        "ffn_W2": unif(hidden, (hidden, d_enc)),
        "ffn_b2": np.zeros(d_enc),
        "ln2_g": np.ones(d_enc),
        "ln2_b": np.zeros(d_enc),
    }


def mhsa(x: np.ndarray, p: dict, heads: int):
    """Full multi-head self-attention over the rows of ``x``."""
    k, d = x.shape
    if d % heads:
        raise DimensionError(f"head count {heads} does not divide width {d}")
    dh = d // heads

    def split(m):
        return m.reshape(k, heads, dh).transpose(1, 0, 2)

    q, kk, v = split(x @ p["attn_Wq"]), split(x @ p["attn_Wk"]), split(x @ p["attn_Wv"])
    logits = q @ kk.transpose(0, 2, 1) / math.sqrt(dh)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite attention logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=-1, keepdims=True)
    heads_out = probs @ v
    o = heads_out.transpose(1, 0, 2).reshape(k, d)
    return o @ p["attn_Wo"], (x, q, kk, v, probs, o, heads, dh)


def mhsa_backward(dy: np.ndarray, cache, p: dict):
    x, q, kk, v, probs, o, heads, dh = cache
    k, d = x.shape
    grads = {"attn_Wo": o.T @ dy}
    do = (dy @ p["attn_Wo"].T).reshape(k, heads, dh).transpose(1, 0, 2)
    dprobs = do @ v.transpose(0, 2, 1)
    dv = probs.transpose(0, 2, 1) @ do
    dlogits = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) / math.sqrt(dh)
    dq = dlogits @ kk
    dk = dlogits.transpose(0, 2, 1) @ q

    def merge(m):
        return m.transpose(1, 0, 2).reshape(k, d)

    dq, dk, dv = merge(dq), merge(dk), merge(dv)
    grads["attn_Wq"] = x.T @ dq
    grads["attn_Wk"] = x.T @ dk
    grads["attn_Wv"] = x.T @ dv
    dx = dq @ p["attn_Wq"].T + dk @ p["attn_Wk"].T + dv @ p["attn_Wv"].T
    return dx, grads


def refine_encodings(e0: np.ndarray, p: dict, heads: int, eps: float = 1e-6):
    """``E' = LN(E0 + MHSA(E0))``, ``E = LN(E' + FFN(E'))``. Returns ``(E, cache)``."""
    attn, attn_cache = mhsa(e0, p, heads)
    e1, ln1_cache = nk.layer_norm(e0 + attn, p["ln1_g"], p["ln1_b"], eps)
    pre = e1 @ p["ffn_W1"] + p["ffn_b1"]
    hid = nk.relu(pre)
    ffn = hid @ p["ffn_W2"] + p["ffn_b2"]
    e, ln2_cache = nk.layer_norm(e1 + ffn, p["ln2_g"], p["ln2_b"], eps)
    return e, (attn_cache, ln1_cache, e1, pre, hid, ln2_cache)


def refine_backward(de: np.ndarray, cache, p: dict):
    """Gradients of the refinement block parameters given ``dL/dE``."""
    attn_cache, ln1_cache, e1, pre, hid, ln2_cache = cache
    grads = {}
    db, grads["ln2_g"], grads["ln2_b"] = nk.layer_norm_backward(de, ln2_cache)
    grads["ffn_W2"] = hid.T @ db
    grads["ffn_b2"] = db.sum(axis=0)
    dpre = nk.relu_backward(db @ p["ffn_W2"].T, pre)
    grads["ffn_W1"] = e1.T @ dpre
    grads["ffn_b1"] = dpre.sum(axis=0)
    de1 = db + dpre @ p["ffn_W1"].T
    da, grads["ln1_g"], grads["ln1_b"] = nk.layer_norm_backward(de1, ln1_cache)
    dx_attn, attn_grads = mhsa_backward(da, attn_cache, p)
    grads.update(attn_grads)
    return grads, da + dx_attn


def project_to_nodes(basis: SpectralBasis, e: np.ndarray) -> np.ndarray:
    if e.shape[0] != basis.k:
        raise DimensionError(f"encoding has {e.shape[0]} rows, basis has {basis.k} components")
    return basis.eigenvectors @ e


def spectral_features(basis: SpectralBasis, p: dict, heads: int, eps: float = 1e-6):
    """Node-level spectral features and the cache needed to backpropagate into ``p``."""
    e0 = sinusoidal_encode(basis.eigenvalues, p["ln1_g"].shape[0])
    e, cache = refine_encodings(e0, p, heads, eps)
    return project_to_nodes(basis, e), cache


def spectral_features_backward(dz: np.ndarray, basis: SpectralBasis, cache, p: dict) -> dict:
    grads, _ = refine_backward(basis.eigenvectors.T @ dz, cache, p)
    return grads
