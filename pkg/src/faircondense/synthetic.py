"""Stochastic-block-model benchmark with a label-correlated sensitive attribute.

Four blocks, one per (label, sensitive) pair. Labels are fair coin flips; the
sensitive attribute copies the label with probability ``gamma`` and is an
independent coin flip otherwise, so ``corr(y, s) = gamma``. Features are
Gaussian with a class-dependent mean on the first half of the dimensions and a
group-dependent mean on the second half.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError
from .graph_core import Graph
from .store import atomic_write


def make_synthetic(n: int, gamma: float, homophily: float, seed: int, num_features: int = 8,
                   avg_degree: float = 10.0, class_sep: float = 1.0, group_shift: float = 1.0) -> Graph:
    if n < 50:
        raise ConfigError(f"synthetic graph needs n >= 50, got {n}")
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"bias strength must lie in [0, 1], got {gamma}")
    if not 0.0 <= homophily <= 1.0:
        raise ConfigError(f"homophily must lie in [0, 1], got {homophily}")
    if num_features < 2:
        raise ConfigError("need at least two feature dimensions")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    copy = rng.random(n) < gamma
    s = np.where(copy, y, rng.integers(0, 2, size=n))

    half = num_features // 2
    mean = np.zeros((n, num_features))
    mean[:, :half] = (2 * y[:, None] - 1) * class_sep / np.sqrt(half)
    mean[:, half:] = (2 * s[:, None] - 1) * group_shift / np.sqrt(num_features - half)
    x = mean + rng.standard_normal((n, num_features))

    block = 2 * y + s
    sizes = np.bincount(block, minlength=4).astype(float)
    p_in = np.clip(homophily * avg_degree / np.maximum(sizes - 1, 1), 0, 1)
    p_out = np.clip((1 - homophily) * avg_degree / np.maximum(n - sizes, 1), 0, 1)
    edges = []
    for i in range(n - 1):
        others = np.arange(i + 1, n)
        same = block[others] == block[i]
        prob = np.where(same, p_in[block[i]], p_out[block[i]])
        hit = others[rng.random(others.size) < prob]
        edges.append(np.column_stack([np.full(hit.size, i), hit]))
    e = np.concatenate(edges) if edges else np.zeros((0, 2), np.int64)
    return Graph(x, y, s, e, num_classes=2, num_groups=2,
                 metadata={"generator": {"n": n, "gamma": gamma, "homophily": homophily, "seed": seed,
                                         "num_features": num_features, "avg_degree": avg_degree,
                                         "class_sep": class_sep, "group_shift": group_shift}})


def write_dataset(g: Graph, out_dir) -> dict:
    """Write ``nodes.csv`` and ``edges.txt`` in the loader's input formats."""
    out_dir = Path(out_dir)
    d = g.num_features
    lines = ["id," + ",".join(f"f{j}" for j in range(d)) + ",label,sensitive"]
    for i in range(g.num_nodes):
        feats = ",".join(repr(float(v)) for v in g.features[i])
        lines.append(f"{i},{feats},{int(g.labels[i])},{int(g.sensitive[i])}")
    atomic_write(out_dir / "nodes.csv", "\n".join(lines) + "\n")
    edge_text = "# undirected edge list\n" + "".join(f"{u} {v}\n" for u, v in g.edges.tolist())
    atomic_write(out_dir / "edges.txt", edge_text)
    return {"nodes": str(out_dir / "nodes.csv"), "edges": str(out_dir / "edges.txt")}
