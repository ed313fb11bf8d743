import numpy as np
import pytest

from faircondense.graph_core import split_graph
from faircondense.synthetic import make_synthetic


def union_find_components(n, edges):
    """Connected-component count by path-halving union-find."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in edges:
        ru, rv = find(int(u)), find(int(v))
        if ru != rv:
            parent[ru] = rv
    return len({find(i) for i in range(n)})


def brute_force_rates(y_pred, y_true, s, positive_class=1):
    """Accuracy, SP gap and EO gap by explicit Python loops."""
    n = len(y_pred)
    correct = 0
    pos = {0: 0, 1: 0}
    size = {0: 0, 1: 0}
    tp = {0: 0, 1: 0}
    actual = {0: 0, 1: 0}
    for i in range(n):
        g = int(s[i])
        size[g] += 1
        if y_pred[i] == y_true[i]:
            correct += 1
        if y_pred[i] == positive_class:
            pos[g] += 1
        if y_true[i] == positive_class:
            actual[g] += 1
            if y_pred[i] == positive_class:
                tp[g] += 1
    sp = abs(pos[0] / size[0] - pos[1] / size[1])
    eo = abs(tp[0] / actual[0] - tp[1] / actual[1])
    return correct / n, sp, eo


@pytest.fixture(scope="session")
def small_graph():
    return split_graph(make_synthetic(400, 0.6, 0.7, seed=3), seed=3)


@pytest.fixture(scope="session")
def bench_graph():
    return split_graph(make_synthetic(1000, 0.6, 0.7, seed=0), seed=0)


def random_symmetric_adjacency(rng, n, density):
    a = np.triu(rng.random((n, n)) * (rng.random((n, n)) < density), k=1)
    return a + a.T
