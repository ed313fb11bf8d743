"""Graph containers, CSV/edge-list loading, stratified splits and training-split
distribution statistics."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, IntegrityError, ParseError, SchemaError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class Schema:
    """Column mapping for the node table. ``features=None`` means every column
    that is not the id, label or sensitive column."""

    id_column: str = "id"
    label_column: str = "label"
    sensitive_column: str = "sensitive"
    features: tuple | None = None


@dataclass
class Graph:
    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    edges: np.ndarray  # (m, 2) int array, u < v, unique
    train: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    val: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    num_classes: int | None = None
    num_groups: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sensitive = np.asarray(self.sensitive, dtype=np.int64)
        self.edges = canonical_edges(self.edges, self.num_nodes)
        for name in SPLIT_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if self.num_groups is None:
            self.num_groups = int(self.sensitive.max()) + 1 if self.sensitive.size else 0
        self.validate()

    @property
    def num_nodes(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def mean_degree(self) -> float:
        return 2.0 * len(self.edges) / self.num_nodes if self.num_nodes else 0.0

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def validate(self) -> None:
        n = self.num_nodes
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if self.labels.shape != (n,) or self.sensitive.shape != (n,):
            raise DataError("labels and sensitive vectors must have one entry per node")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError("label outside declared class range")
        if n and (self.sensitive.min() < 0 or self.sensitive.max() >= self.num_groups):
            raise DataError("sensitive value outside declared group range")
        seen = set()
        for name in SPLIT_NAMES:
            idx = getattr(self, name)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise IntegrityError(f"{name} split references a node outside 0..{n - 1}")
            s = set(idx.tolist())
            if len(s) != idx.size:
                raise IntegrityError(f"{name} split contains duplicate node ids")
            if seen & s:
                raise IntegrityError("splits overlap")
            seen |= s

    def with_splits(self, train, val, test, **meta) -> "Graph":
        metadata = dict(self.metadata)
        metadata.update(meta)
        return replace(self, train=np.asarray(train), val=np.asarray(val),
                       test=np.asarray(test), metadata=metadata)


@dataclass(frozen=True)
class DistributionStats:
    class_props: np.ndarray
    group_props: np.ndarray
    joint_props: np.ndarray  # [class, group]
    count: int

    def to_dict(self) -> dict:
        return {
            "class_props": self.class_props.tolist(),
            "group_props": self.group_props.tolist(),
            "joint_props": self.joint_props.tolist(),
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, d) -> "DistributionStats":
        return cls(np.asarray(d["class_props"], dtype=float), np.asarray(d["group_props"], dtype=float),
                   np.asarray(d["joint_props"], dtype=float), int(d["count"]))


def canonical_edges(edges, n: int) -> np.ndarray:
    """Sorted unique undirected pairs with ``u < v``; self-loops dropped."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise IntegrityError(f"edge endpoint outside 0..{n - 1}")
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    return np.unique(e, axis=0) if e.size else np.zeros((0, 2), np.int64)


def _dense_codes(values: list, column: str):
    """Map raw label/sensitive values onto 0..k-1. Integer-valued columns keep
    their numeric order; anything else is sorted as strings."""
    try:
        nums = [int(v) for v in values]
        keys = sorted(set(nums))
        lookup = {k: i for i, k in enumerate(keys)}
        return np.array([lookup[v] for v in nums], dtype=np.int64), [str(k) for k in keys]
    except ValueError:
        keys = sorted(set(values))
        lookup = {k: i for i, k in enumerate(keys)}
        logger.info("column %s treated as categorical with %d levels", column, len(keys))
        return np.array([lookup[v] for v in values], dtype=np.int64), keys


def load_graph(node_table_path, edge_list_path, schema: Schema | None = None) -> Graph:
    """Read a node CSV and a whitespace edge list into a :class:`Graph`.

    Node ids are remapped to ``0..n-1`` in file order; the original ids are kept
    in ``metadata["node_ids"]``.
    """
    schema = schema or Schema()
    node_table_path = Path(node_table_path)
    with node_table_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{node_table_path}: empty node table") from None
        header = [h.strip() for h in header]
        for col in (schema.id_column, schema.label_column, schema.sensitive_column):
            if col not in header:
                raise SchemaError(f"{node_table_path}: missing column {col!r}")
        reserved = {schema.id_column, schema.label_column, schema.sensitive_column}
        if schema.features is None:
            feat_cols = [h for h in header if h not in reserved]
        else:
            feat_cols = list(schema.features)
            for col in feat_cols:
                if col not in header:
                    raise SchemaError(f"{node_table_path}: missing feature column {col!r}")
        pos = {h: i for i, h in enumerate(header)}
        id_i, lab_i, sen_i = pos[schema.id_column], pos[schema.label_column], pos[schema.sensitive_column]
        feat_i = [pos[c] for c in feat_cols]

        ids, labels, sens, rows = [], [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{node_table_path}:{rownum}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[i]) for i in feat_i])
            except ValueError:
                raise ParseError(f"{node_table_path}:{rownum}: non-numeric feature value") from None
            ids.append(row[id_i].strip())
            labels.append(row[lab_i].strip())
            sens.append(row[sen_i].strip())

    if not ids:
        raise SchemaError(f"{node_table_path}: node table has no rows")
    remap = {}
    for i, raw in enumerate(ids):
        if raw in remap:
            raise IntegrityError(f"{node_table_path}: duplicate node id {raw!r}")
        remap[raw] = i
    features = np.array(rows, dtype=np.float64).reshape(len(ids), len(feat_cols))
    if not np.all(np.isfinite(features)):
        raise ParseError(f"{node_table_path}: non-finite feature value")
    y, label_levels = _dense_codes(labels, schema.label_column)
    s, group_levels = _dense_codes(sens, schema.sensitive_column)

    edges = []
    with Path(edge_list_path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ParseError(f"{edge_list_path}:{lineno}: expected two node ids")
            try:
                edges.append((remap[parts[0]], remap[parts[1]]))
            except KeyError as exc:
                raise IntegrityError(f"{edge_list_path}:{lineno}: unknown node id {exc.args[0]!r}") from None

    return Graph(
        features=features, labels=y, sensitive=s, edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
        metadata={
            "node_ids": ids,
            "feature_columns": feat_cols,
            "label_levels": label_levels,
            "group_levels": group_levels,
            "source": {"nodes": str(node_table_path), "edges": str(edge_list_path)},
        },
    )


def load_split_file(g: Graph, path) -> Graph:
    """Apply an ``(id, split_name)`` CSV, overriding any existing split."""
    ids = g.metadata.get("node_ids") or [str(i) for i in range(g.num_nodes)]
    remap = {raw: i for i, raw in enumerate(ids)}
    parts = {name: [] for name in SPLIT_NAMES}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for rownum, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if rownum == 1 and row[0].strip() == "id":
                continue
            raw, name = row[0].strip(), row[1].strip()
            if name not in parts:
                raise ParseError(f"{path}:{rownum}: unknown split {name!r}")
            if raw not in remap:
                raise IntegrityError(f"{path}:{rownum}: unknown node id {raw!r}")
            parts[name].append(remap[raw])
    return g.with_splits(*(sorted(parts[n]) for n in SPLIT_NAMES), split_source=str(path))


def split_graph(g: Graph, fractions=(0.5, 0.25, 0.25), seed: int = 0) -> Graph:
    """Stratified train/val/test split over (label, sensitive) cells.

    Each cell is apportioned separately: floor of ``fraction * cell_size`` for
    every split, then the leftover nodes go to the splits with the largest
    fractional parts. Nodes left over when the fractions sum below one stay
    unassigned.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or fr.sum() <= 0 or fr.sum() > 1 + 1e-12:
        raise ValueError(f"split fractions must be 3 non-negative values summing to at most 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    warnings = []
    cells = g.labels * g.num_groups + g.sensitive
    for cell in np.unique(cells):
        members = np.flatnonzero(cells == cell)
        members = members[rng.permutation(members.size)]
        m = members.size
        quotas = m * fr
        sizes = np.floor(quotas).astype(np.int64)
        leftover = int(round(min(m, m * fr.sum()))) - int(sizes.sum())
        if leftover > 0:
            order = np.lexsort((np.arange(3), -(quotas - sizes)))
            sizes[order[:leftover]] += 1
        if m < np.count_nonzero(fr):
            warnings.append(f"cell (label={cell // g.num_groups}, sensitive={cell % g.num_groups}) "
                            f"has {m} nodes for {np.count_nonzero(fr)} splits; proportional assignment")
        start = 0
        for i in range(3):
            parts[i].extend(members[start:start + sizes[i]].tolist())
            start += sizes[i]
    out = [np.sort(np.array(p, dtype=np.int64)) for p in parts]
    meta = {"split_seed": int(seed), "split_fractions": fr.tolist(), "split_stratified_by": "label,sensitive"}
    if warnings:
        meta["split_warnings"] = warnings
    return g.with_splits(*out, **meta)


def empirical_stats(g: Graph, nodes=None) -> DistributionStats:
    """Class, group and joint proportions over the training split (or ``nodes``)."""
    idx = g.train if nodes is None else np.asarray(nodes, dtype=np.int64)
    if idx.size == 0:
        raise DataError("empirical_stats: training split is empty")
    return stats_from_arrays(g.labels[idx], g.sensitive[idx], g.num_classes, g.num_groups)


def stats_from_arrays(labels, sensitive, num_classes: int, num_groups: int) -> DistributionStats:
    labels = np.asarray(labels, dtype=np.int64)
    sensitive = np.asarray(sensitive, dtype=np.int64)
    if labels.size == 0:
        raise DataError("cannot compute statistics of an empty node set")
    joint = np.zeros((num_classes, num_groups))
    np.add.at(joint, (labels, sensitive), 1.0)
    joint /= labels.size
    return DistributionStats(joint.sum(axis=1), joint.sum(axis=0), joint, int(labels.size))
