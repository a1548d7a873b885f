import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from d2drelay.assignment import max_weight_matching
from oracles import brute_force_matching


def test_singleton_positive_edge():
    m = max_weight_matching(np.array([[5.0]]))
    assert m.pairs == [(0, 0)]
    assert m.total == 5.0


def test_all_nonpositive_weights_leave_everything_unmatched():
    w = np.array([[-1.0, 0.0], [0.0, -2.5]])
    m = max_weight_matching(w)
    assert m.pairs == []
    assert m.total == 0.0


def test_random_integer_instances_match_bruteforce():
    rng = np.random.default_rng(10)
    for _ in range(200):
        w = rng.integers(-5, 11, size=(6, 6)).astype(float)
        m = max_weight_matching(w)
        assert m.total == brute_force_matching(w)


def test_rectangular_instances_match_scipy():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n, k = rng.integers(1, 9, size=2)
        w = rng.normal(size=(n, k)) * 4
        m = max_weight_matching(w)
        profit = np.zeros((max(n, k), max(n, k)))
        profit[:n, :k] = np.maximum(w, 0.0)
        r, c = linear_sum_assignment(profit, maximize=True)
        assert m.total == pytest.approx(profit[r, c].sum())


def test_matching_respects_one_to_one():
    rng = np.random.default_rng(12)
    w = rng.normal(size=(7, 5)) * 3
    m = max_weight_matching(w)
    rows = [i for i, _ in m.pairs]
    cols = [j for _, j in m.pairs]
    assert len(rows) == len(set(rows))
    assert len(cols) == len(set(cols))
    assert all(w[i, j] > 0 for i, j in m.pairs)


def test_matching_deterministic():
    rng = np.random.default_rng(13)
    w = rng.integers(0, 4, size=(8, 8)).astype(float)  # plenty of ties
    a = max_weight_matching(w)
    b = max_weight_matching(w)
    assert a.pairs == b.pairs and a.total == b.total


def test_matching_rejects_bad_input():
    with pytest.raises(ValueError):
        max_weight_matching(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        max_weight_matching(np.array([[np.inf, 1.0]]))
