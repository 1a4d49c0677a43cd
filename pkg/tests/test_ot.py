import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from msfm.cost import CostFn, cost_matrix
from msfm.data import make_rng
from msfm.errors import NumericalError, ShapeError
from msfm.ot import (assignment_cost, brute_force_assignment, is_permutation, permutation_matrix,
                     sinkhorn, solve_exact_assignment)


def test_brute_force_trivial():
    s, c = brute_force_assignment(np.array([[3.0]]))
    assert list(s) == [0] and c == 3.0
    s, c = brute_force_assignment(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert list(s) == [0, 1] and c == 0.0


def test_brute_force_enumerates(rng):
    C = rng.random((5, 5))
    s, c = brute_force_assignment(C)
    costs = [C[np.arange(5), p].sum() for p in itertools.permutations(range(5))]
    assert c == min(costs) and assignment_cost(C, s) == c


def test_brute_force_tie_is_lexicographic():
    s, c = brute_force_assignment(np.zeros((3, 3)))
    assert list(s) == [0, 1, 2]


def test_brute_force_limit():
    with pytest.raises(ValueError):
        brute_force_assignment(np.zeros((9, 9)))


@pytest.mark.parametrize("method", ["scipy", "sap"])
def test_exact_matches_brute_force(method):
    r = make_rng(99)
    for _ in range(100):
        k = int(r.integers(1, 8))
        C = r.standard_normal((k, k)) ** 2 * 10
        _, bf = brute_force_assignment(C)
        s, c = solve_exact_assignment(C, method)
        assert is_permutation(s, k)
        assert abs(c - bf) < 1e-9


@pytest.mark.parametrize("method", ["scipy", "sap"])
def test_exact_integer_ties(method):
    r = make_rng(3)
    for _ in range(50):
        k = int(r.integers(2, 8))
        C = r.integers(0, 3, size=(k, k)).astype(float)
        assert solve_exact_assignment(C, method)[1] == brute_force_assignment(C)[1]


def test_hidden_zero_permutation(rng):
    k = 9
    perm = rng.permutation(k)
    C = rng.random((k, k)) + 1.0
    C[np.arange(k), perm] = 0.0
    s, c = solve_exact_assignment(C)
    assert np.array_equal(s, perm) and c == 0.0


def test_large_gaussian_batch(rng):
    X0, X1 = rng.standard_normal((512, 2)), rng.standard_normal((512, 2))
    C = cost_matrix(X0, X1, CostFn())
    s, c = solve_exact_assignment(C)
    assert is_permutation(s) and c <= np.trace(C)
    s2, c2 = solve_exact_assignment(C[:128, :128], "sap")
    assert abs(c2 - solve_exact_assignment(C[:128, :128])[1]) < 1e-9


def test_exact_rejects_nonfinite():
    with pytest.raises(NumericalError):
        solve_exact_assignment(np.array([[np.nan, 1.0], [1.0, 0.0]]))
    with pytest.raises(ShapeError):
        solve_exact_assignment(np.zeros((2, 3)))


def test_assignment_cost_examples():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert assignment_cost(C, [0, 1]) == 0.0
    assert assignment_cost(C, [1, 0]) == 2.0


def test_permutation_matrix():
    P = permutation_matrix(np.array([2, 0, 1]))
    assert np.array_equal(P.sum(0), np.ones(3)) and P[0, 2] == 1.0


def _gauss_cost(r, k):
    return cost_matrix(r.standard_normal((k, 2)), r.standard_normal((k, 2)), CostFn())


def test_sinkhorn_large_epsilon_is_uniform(rng):
    C = _gauss_cost(rng, 16)
    res = sinkhorn(C, 1e3 * C.max())
    assert res.converged
    assert np.abs(res.pi - 1.0 / 16).max() < 1e-3


def test_sinkhorn_small_epsilon_recovers_ot(rng):
    C = _gauss_cost(rng, 16)
    res = sinkhorn(C, 1e-3 * np.median(C), tol=1e-9)
    exact = solve_exact_assignment(C)[1]
    assert abs((res.pi * C).sum() - exact) / exact < 0.01


def test_sinkhorn_k1():
    res = sinkhorn(np.array([[4.2]]), 0.3)
    assert res.pi.shape == (1, 1) and res.pi[0, 0] == pytest.approx(1.0)


def test_sinkhorn_monotone_in_epsilon(rng):
    C = _gauss_cost(rng, 32)
    m = C.mean()
    costs = [(sinkhorn(C, s * m, tol=1e-10).pi * C).sum() for s in (10, 1, 0.1, 0.01)]
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_sinkhorn_nonconvergence_flag(rng):
    C = _gauss_cost(rng, 32)
    res = sinkhorn(C, 1e-3 * C.mean(), max_iter=3, tol=1e-12)
    assert not res.converged and np.all(np.isfinite(res.pi))


def test_sinkhorn_tiny_epsilon_is_finite(rng):
    C = _gauss_cost(rng, 24)
    gaps = np.diff(np.unique(C))
    res = sinkhorn(C, 1e-4 * gaps[gaps > 0].min())
    assert np.all(np.isfinite(res.pi))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(0, 50)), st.floats(0.05, 20))
def test_sinkhorn_marginals_when_converged(C, eps):
    res = sinkhorn(C, eps, tol=1e-8)
    if res.converged:
        assert np.abs(res.pi.sum(0) - 1).max() < 1e-8
        assert np.abs(res.pi.sum(1) - 1).max() < 1e-8
    assert np.all(res.pi >= 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-1e3, 1e3)))
def test_exact_equals_brute_force_property(C):
    _, bf = brute_force_assignment(C)
    for method in ("scipy", "sap"):
        assert abs(solve_exact_assignment(C, method)[1] - bf) < 1e-9 * max(1.0, abs(bf))
