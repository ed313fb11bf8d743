import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from faircondense.errors import DataError, IntegrityError, ParseError, SchemaError
from faircondense.graph_core import (Graph, Schema, canonical_edges, empirical_stats, load_graph,
                                     load_split_file, split_graph, stats_from_arrays)

from conftest import union_find_components


def _write(tmp_path, nodes, edges):
    (tmp_path / "nodes.csv").write_text(nodes)
    (tmp_path / "edges.txt").write_text(edges)
    return tmp_path / "nodes.csv", tmp_path / "edges.txt"


def test_load_remaps_string_ids(tmp_path):
    nodes = "id,a,b,label,sensitive\nn7,1.0,2.0,yes,m\nn3,0.5,-1,no,f\nn9,3,4,yes,f\n"
    edges = "# comment\nn7 n3\nn3 n7\nn9 n9\nn9 n3\n"
    g = load_graph(*_write(tmp_path, nodes, edges))
    assert g.num_nodes == 3
    assert g.metadata["node_ids"] == ["n7", "n3", "n9"]
    assert g.edges.tolist() == [[0, 1], [1, 2]]
    assert g.labels.tolist() == [1, 0, 1]
    assert g.sensitive.tolist() == [1, 0, 0]
    assert g.metadata["feature_columns"] == ["a", "b"]


def test_missing_column_is_schema_error(tmp_path):
    paths = _write(tmp_path, "id,a,label\n0,1,0\n", "")
    with pytest.raises(SchemaError, match="sensitive"):
        load_graph(*paths)


def test_non_numeric_feature_names_row(tmp_path):
    paths = _write(tmp_path, "id,a,label,sensitive\n0,1,0,0\n1,x,1,1\n", "")
    with pytest.raises(ParseError, match=":3:"):
        load_graph(*paths)


def test_unknown_edge_endpoint(tmp_path):
    paths = _write(tmp_path, "id,a,label,sensitive\n0,1,0,0\n1,2,1,1\n", "0 5\n")
    with pytest.raises(IntegrityError, match="unknown node id"):
        load_graph(*paths)


def test_custom_schema(tmp_path):
    paths = _write(tmp_path, "node,f,cls,grp,junk\n0,1,0,0,9\n1,2,1,1,9\n", "0 1\n")
    g = load_graph(*paths, Schema("node", "cls", "grp", features=("f",)))
    assert g.num_features == 1


def test_split_file_overrides(tmp_path):
    paths = _write(tmp_path, "id,a,label,sensitive\na,1,0,0\nb,2,1,1\nc,3,0,1\n", "a b\n")
    g = load_graph(*paths)
    (tmp_path / "splits.csv").write_text("id,split\na,train\nb,val\nc,test\n")
    g2 = load_split_file(g, tmp_path / "splits.csv")
    assert (g2.train.tolist(), g2.val.tolist(), g2.test.tolist()) == ([0], [1], [2])


def test_overlapping_splits_rejected():
    with pytest.raises(IntegrityError):
        Graph(np.zeros((3, 1)), [0, 1, 0], [0, 0, 1], [], train=[0, 1], val=[1], test=[2])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.lists(st.tuples(st.integers(0, 39), st.integers(0, 39)), max_size=80))
def test_canonical_edges_preserve_connectivity(n, raw):
    raw = [(u % n, v % n) for u, v in raw]
    e = canonical_edges(raw, n)
    assert np.all(e[:, 0] < e[:, 1]) if len(e) else True
    assert len({tuple(x) for x in e.tolist()}) == len(e)
    assert union_find_components(n, e) == union_find_components(n, raw)


def test_balanced_split_preserves_cells():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 200)
    s = np.tile([0, 1], 200)
    g = Graph(rng.standard_normal((400, 2)), y, s, [])
    g = split_graph(g, (0.5, 0.25, 0.25), seed=1)
    whole = stats_from_arrays(y, s, 2, 2).joint_props
    for part in (g.train, g.val, g.test):
        joint = stats_from_arrays(y[part], s[part], 2, 2).joint_props
        assert np.max(np.abs(joint - whole)) <= 1.0 / part.size
    assert g.train.size + g.val.size + g.test.size == 400


def test_split_deterministic_and_disjoint():
    rng = np.random.default_rng(1)
    g = Graph(rng.standard_normal((101, 2)), rng.integers(0, 3, 101), rng.integers(0, 2, 101), [])
    a, b = split_graph(g, seed=5), split_graph(g, seed=5)
    assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("train", "val", "test"))
    assert not set(a.train) & set(a.val)


def test_stats_match_tally():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 3, 1000)
    s = rng.integers(0, 4, 1000)
    st_ = stats_from_arrays(y, s, 3, 4)
    tally = np.zeros((3, 4))
    for a, b in zip(y, s):
        tally[a, b] += 1
    assert np.array_equal(st_.joint_props, tally / 1000)
    assert np.allclose(st_.joint_props.sum(axis=1), st_.class_props, atol=1e-12)
    assert np.allclose(st_.joint_props.sum(axis=0), st_.group_props, atol=1e-12)


def test_empty_train_split():
    g = Graph(np.zeros((4, 1)), [0, 1, 0, 1], [0, 0, 1, 1], [])
    with pytest.raises(DataError):
        empirical_stats(g)
