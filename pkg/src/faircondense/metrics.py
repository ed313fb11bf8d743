"""Utility and group-fairness metrics, report containers and the
condensation drift audit."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import UndefinedMetricError


def _binary_groups(s, group_partition=None) -> np.ndarray:
    s = np.asarray(s, dtype=np.int64)
    if group_partition is None:
        if s.size and (s.min() < 0 or s.max() > 1):
            raise ValueError("sensitive values outside {0, 1} need an explicit group_partition")
        return s
    missing = set(np.unique(s).tolist()) - set(group_partition)
    if missing:
        raise ValueError(f"group_partition does not cover sensitive values {sorted(missing)}")
    lut = np.vectorize(lambda v: group_partition[int(v)], otypes=[np.int64])
    return lut(s) if s.size else s


def accuracy(y_pred, y_true) -> float:
    y_pred = np.asarray(y_pred)
    y_true = np.asarray(y_true)
    if y_pred.shape != y_true.shape:
        raise ValueError("prediction and label vectors differ in length")
    if y_pred.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return float(np.mean(y_pred == y_true))


def delta_sp(y_pred, s, positive_class: int = 1, group_partition=None) -> float:
    """Absolute gap in positive-prediction rate between the two groups."""
    pos = np.asarray(y_pred) == positive_class
    g = _binary_groups(s, group_partition)
    rates = []
    for grp in (0, 1):
        members = g == grp
        if not members.any():
            raise UndefinedMetricError(f"statistical parity undefined: group {grp} is empty")
        rates.append(pos[members].mean())
    return float(abs(rates[0] - rates[1]))


def delta_eo(y_pred, y_true, s, positive_class: int = 1, group_partition=None) -> float:
    """Absolute gap in true-positive rate between the two groups."""
    pos_pred = np.asarray(y_pred) == positive_class
    pos_true = np.asarray(y_true) == positive_class
    g = _binary_groups(s, group_partition)
    rates = []
    for grp in (0, 1):
        members = (g == grp) & pos_true
        if not members.any():
            raise UndefinedMetricError(f"equal opportunity undefined: group {grp} has no positive-labelled nodes")
        rates.append(pos_pred[members].mean())
    return float(abs(rates[0] - rates[1]))


def contingency(y_pred, y_true, s, num_classes: int, num_groups: int) -> np.ndarray:
    """Counts indexed ``[sensitive, true label, predicted label]``."""
    table = np.zeros((num_groups, num_classes, num_classes), dtype=np.int64)
    np.add.at(table, (np.asarray(s), np.asarray(y_true), np.asarray(y_pred)), 1)
    return table


def metrics_from_table(table: np.ndarray, positive_class: int = 1, group_partition=None) -> dict:
    """Accuracy, SP gap and EO gap recomputed from a contingency table."""
    num_groups = table.shape[0]
    part = group_partition or {a: a for a in range(num_groups)}
    if group_partition is None and num_groups > 2 and table[2:].sum():
        raise ValueError("sensitive values outside {0, 1} need an explicit group_partition")
    total = table.sum()
    if total == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    acc = np.trace(table.sum(axis=0)) / total
    binned = np.zeros((2,) + table.shape[1:], dtype=np.int64)
    for a in range(num_groups):
        if table[a].sum():
            binned[part[a]] += table[a]
    sp_rates, eo_rates = [], []
    for grp in (0, 1):
        size = binned[grp].sum()
        if size == 0:
            raise UndefinedMetricError(f"statistical parity undefined: group {grp} is empty")
        sp_rates.append(binned[grp][:, positive_class].sum() / size)
        positives = binned[grp][positive_class].sum()
        if positives == 0:
            raise UndefinedMetricError(f"equal opportunity undefined: group {grp} has no positive-labelled nodes")
        eo_rates.append(binned[grp][positive_class, positive_class] / positives)
    return {"accuracy": float(acc), "delta_sp": float(abs(sp_rates[0] - sp_rates[1])),
            "delta_eo": float(abs(eo_rates[0] - eo_rates[1]))}


@dataclass
class FairnessReport:
    accuracy: float
    delta_sp: float
    delta_eo: float
    positive_class: int = 1
    group_partition: dict | None = None
    group_tables: list = field(default_factory=list)
    sample_count: dict = field(default_factory=dict)
    label: str = "model"
    std: dict | None = None
    per_seed: list | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.group_partition is not None:
            d["group_partition"] = {str(k): v for k, v in self.group_partition.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FairnessReport":
        d = dict(d)
        if d.get("group_partition") is not None:
            d["group_partition"] = {int(k): v for k, v in d["group_partition"].items()}
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate_predictions(y_pred, y_true, s, num_classes: int, num_groups: int, positive_class: int = 1,
                         group_partition=None, label: str = "model") -> FairnessReport:
    table = contingency(y_pred, y_true, s, num_classes, num_groups)
    g = _binary_groups(s, group_partition)
    return FairnessReport(
        accuracy=accuracy(y_pred, y_true),
        delta_sp=delta_sp(y_pred, s, positive_class, group_partition),
        delta_eo=delta_eo(y_pred, y_true, s, positive_class, group_partition),
        positive_class=positive_class,
        group_partition=group_partition,
        group_tables=table.tolist(),
        sample_count={"0": int(np.sum(g == 0)), "1": int(np.sum(g == 1))},
        label=label,
    )


def aggregate(reports: list, label: str | None = None) -> FairnessReport:
    """Seed-wise mean with population standard deviation per column."""
    cols = ("accuracy", "delta_sp", "delta_eo")
    vals = {c: np.array([getattr(r, c) for r in reports]) for c in cols}
    first = reports[0]
    return FairnessReport(
        accuracy=float(vals["accuracy"].mean()),
        delta_sp=float(vals["delta_sp"].mean()),
        delta_eo=float(vals["delta_eo"].mean()),
        positive_class=first.positive_class,
        group_partition=first.group_partition,
        label=label or first.label,
        std={c: float(vals[c].std()) for c in cols},
        per_seed=[{c: getattr(r, c) for c in cols} for r in reports],
    )


def render_table(reports) -> str:
    """Aligned text table in percent: ACC, SP gap, EO gap (``mean±std`` when aggregated)."""
    if isinstance(reports, FairnessReport):
        reports = [reports]
    header = ["Method", "ACC(%)", "ΔSP(%)", "ΔEO(%)"]
    rows = []
    for r in reports:
        cells = [r.label]
        for col in ("accuracy", "delta_sp", "delta_eo"):
            cell = f"{100 * getattr(r, col):.2f}"
            if r.std is not None:
                cell += f"±{100 * r.std[col]:.2f}"
            cells.append(cell)
        rows.append(cells)
    widths = [max(len(x[i]) for x in [header] + rows) for i in range(4)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for cells in rows:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))))
    return "\n".join(lines)


def _props(values, k: int) -> np.ndarray:
    counts = np.bincount(np.asarray(values, dtype=np.int64), minlength=k)[:k]
    return counts / max(1, len(values))


def audit_condensation(g, cg) -> dict:
    """Proportion gaps between the source training split and the condensed graph.

    A marginal gap above ``1/n_syn`` is flagged as a violation.
    """
    from .graph_core import empirical_stats

    src = empirical_stats(g)
    n_syn = cg.num_syn
    cls_gap = np.abs(_props(cg.labels, g.num_classes) - src.class_props)
    grp_gap = np.abs(_props(cg.sensitive, g.num_groups) - src.group_props)
    joint = np.zeros((g.num_classes, g.num_groups))
    np.add.at(joint, (cg.labels, cg.sensitive), 1.0)
    joint_gap = np.abs(joint / n_syn - src.joint_props)
    bound = 1.0 / n_syn
    tol = 1e-12
    violations = []
    for c, gap in enumerate(cls_gap):
        if gap > bound + tol:
            violations.append({"kind": "class", "value": c, "gap": float(gap), "bound": bound})
    for a, gap in enumerate(grp_gap):
        if gap > bound + tol:
            violations.append({"kind": "group", "value": a, "gap": float(gap), "bound": bound})
    return {
        "n_syn": n_syn,
        "bound": bound,
        "class_gaps": cls_gap.tolist(),
        "group_gaps": grp_gap.tolist(),
        "joint_gaps": joint_gap.tolist(),
        "max_marginal_gap": float(max(cls_gap.max(initial=0), grp_gap.max(initial=0))),
        "mean_joint_gap": float(joint_gap.mean()),
        "violations": violations,
    }


def render_audit(audit: dict) -> str:
    lines = [f"n_syn = {audit['n_syn']}, bound 1/n_syn = {audit['bound']:.4f}"]
    for kind in ("class", "group"):
        for i, gap in enumerate(audit[f"{kind}_gaps"]):
            lines.append(f"  {kind:<5} {i:>3}  gap {gap:.4f}")
    lines.append(f"  mean joint-cell gap {audit['mean_joint_gap']:.4f}")
    lines.append(f"  violations: {len(audit['violations'])}")
    return "\n".join(lines)
