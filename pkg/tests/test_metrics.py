import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from faircondense import metrics
from faircondense.condenser import condense
from faircondense.config import CondenseConfig
from faircondense.errors import UndefinedMetricError

from conftest import brute_force_rates


def random_instance(seed, n=500):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, n), rng.integers(0, 2, n), rng.integers(0, 2, n)


@pytest.mark.parametrize("seed", range(10))
def test_matches_brute_force(seed):
    pred, true, s = random_instance(seed)
    acc, sp, eo = brute_force_rates(pred, true, s)
    assert metrics.accuracy(pred, true) == acc
    assert metrics.delta_sp(pred, s) == sp
    assert metrics.delta_eo(pred, true, s) == eo


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_table_path_agrees(seed):
    pred, true, s = random_instance(seed, 200)
    table = metrics.contingency(pred, true, s, 2, 2)
    assert table.sum() == 200
    via_table = metrics.metrics_from_table(table)
    assert np.isclose(via_table["accuracy"], metrics.accuracy(pred, true), atol=1e-15)
    assert np.isclose(via_table["delta_sp"], metrics.delta_sp(pred, s), atol=1e-15)
    assert np.isclose(via_table["delta_eo"], metrics.delta_eo(pred, true, s), atol=1e-15)


def test_group_swap_symmetry():
    pred, true, s = random_instance(3)
    assert metrics.delta_sp(pred, s) == metrics.delta_sp(pred, 1 - s)
    assert metrics.delta_eo(pred, true, s) == metrics.delta_eo(pred, true, 1 - s)


def test_constant_predictions_are_fair():
    _, true, s = random_instance(4)
    assert metrics.delta_sp(np.ones(500, int), s) == 0.0
    assert metrics.delta_eo(np.zeros(500, int), true, s) == 0.0


def test_undefined_cases():
    with pytest.raises(UndefinedMetricError):
        metrics.delta_sp([1, 0], [0, 0])
    with pytest.raises(UndefinedMetricError):
        metrics.delta_eo([1, 0, 1], [0, 0, 1], [0, 1, 1])
    with pytest.raises(ValueError):
        metrics.accuracy([], [])
    with pytest.raises(ValueError):
        metrics.delta_sp([1, 0, 1], [0, 1, 2])


def test_group_partition_bins_multivalued_attribute():
    pred = np.array([1, 1, 0, 0, 1, 0])
    s = np.array([0, 1, 2, 2, 3, 3])
    part = {0: 0, 1: 0, 2: 1, 3: 1}
    assert metrics.delta_sp(pred, s, group_partition=part) == pytest.approx(1.0 - 0.25)
    table = metrics.contingency(pred, pred, s, 2, 4)
    assert metrics.metrics_from_table(table, group_partition=part)["delta_sp"] == pytest.approx(0.75)


def test_aggregate_and_render():
    reps = [metrics.FairnessReport(0.8, 0.1, 0.2), metrics.FairnessReport(0.9, 0.3, 0.0)]
    agg = metrics.aggregate(reps, label="x")
    assert agg.accuracy == pytest.approx(0.85) and agg.std["delta_sp"] == pytest.approx(0.1)
    text = metrics.render_table(agg)
    assert "85.00±5.00" in text and "ΔSP(%)" in text
    again = metrics.FairnessReport.from_dict(agg.to_dict())
    assert metrics.render_table(again) == text


def test_audit_within_bound(small_graph):
    for seed in range(5):
        cg = condense(small_graph, CondenseConfig(rho=0.1, proxy_steps=5), seed)
        audit = metrics.audit_condensation(small_graph, cg)
        assert audit["violations"] == []
        assert audit["max_marginal_gap"] <= 1 / cg.num_syn + 1e-12
    assert "violations: 0" in metrics.render_audit(audit)
