import math

import numpy as np
import pytest

from conftest import gaussian_sampler
from msfm.coupling import (Coupler, compute_coupling, coupling_matrix, draw_pairs, iter_joint,
                           mean_coupling_cost, sample_joint)
from msfm.cost import CostFn, cost_matrix
from msfm.data import make_rng
from msfm.errors import ConfigError, ShapeError
from msfm.ot import assignment_cost, solve_exact_assignment

ALL = ["uniform", "batchot", "batcheot", "stable", "heuristic"]


def test_uniform_matrix():
    X = np.zeros((4, 2))
    assert np.array_equal(coupling_matrix(Coupler("condot"), X, X), np.full((4, 4), 0.25))


def test_batchot_identical_batches_identity(rng):
    X = rng.standard_normal((10, 2))
    assert np.array_equal(coupling_matrix(Coupler("batchot"), X, X), np.eye(10))


def test_batcheot_large_epsilon_uniform(rng):
    X0, X1 = rng.standard_normal((8, 2)), rng.standard_normal((8, 2))
    C = cost_matrix(X0, X1, CostFn())
    P = coupling_matrix(Coupler("batcheot", epsilon=1e4 * C.max()), X0, X1)
    assert np.abs(P - 1 / 8).max() < 1e-3


def test_coupler_validation():
    with pytest.raises(ConfigError):
        Coupler("greedy")
    with pytest.raises(ConfigError):
        Coupler("batcheot", epsilon=0.0)
    with pytest.raises(ShapeError):
        compute_coupling(Coupler("batchot"), np.zeros((3, 2)), np.zeros((4, 2)))


@pytest.mark.parametrize("kind", ALL)
def test_batch_marginals(rng, kind):
    X0, X1 = rng.standard_normal((32, 2)), 2 + rng.standard_normal((32, 2))
    cp = compute_coupling(Coupler(kind), X0, X1)
    P = cp.matrix()
    assert np.abs(P.sum(0) - 1).max() < 1e-6 and np.abs(P.sum(1) - 1).max() < 1e-6
    if Coupler(kind).is_permutation:
        i, j = draw_pairs(cp, rng)
        assert sorted(i) == list(range(32)) and sorted(j) == list(range(32))


def test_point_mass_pairs(rng):
    a = np.array([1.0, -2.0])
    q = lambda r, n: np.tile(a, (n, 1))
    x0, x1 = sample_joint(Coupler("batchot"), q, q, 8, 40, rng)
    assert np.all(x0 == a) and np.all(x1 == a)


def test_uniform_pairs_uncorrelated():
    n = 100_000
    x0, x1 = sample_joint(Coupler("uniform"), gaussian_sampler(2), gaussian_sampler(2), 128, n, make_rng(1))
    r = np.corrcoef(x0[:, 0], x1[:, 0])[0, 1]
    assert abs(r) < 4 / math.sqrt(n)


def test_batchot_beats_uniform(rng):
    q0, q1 = gaussian_sampler(2), gaussian_sampler(2, 2.0, 1.0)
    ot, _ = mean_coupling_cost(Coupler("batchot"), q0, q1, 64, 20, rng)
    un, _ = mean_coupling_cost(Coupler("uniform"), q0, q1, 64, 20, rng)
    assert ot < un


def test_cost_dominance_per_batch(rng):
    for _ in range(20):
        X0, X1 = rng.standard_normal((24, 2)), 1 + 2 * rng.standard_normal((24, 2))
        C = cost_matrix(X0, X1, CostFn())
        best = solve_exact_assignment(C)[1]
        for kind in ALL:
            cp = compute_coupling(Coupler(kind), X0, X1)
            total = float((cp.matrix() * C).sum())
            assert best <= total + 1e-9


def test_mean_cost_k1_equals_independent():
    q0, q1 = gaussian_sampler(2), gaussian_sampler(2, 1.0, 3.0)
    a = mean_coupling_cost(Coupler("batchot"), q0, q1, 1, 50, make_rng(4))
    b = mean_coupling_cost(Coupler("uniform"), q0, q1, 1, 50, make_rng(4))
    assert a == b


def test_mean_cost_decreases_with_k():
    q0, q1 = gaussian_sampler(2), gaussian_sampler(2, 1.0, 1.0)
    m2, s2 = mean_coupling_cost(Coupler("batchot"), q0, q1, 2, 200, make_rng(5))
    m16, s16 = mean_coupling_cost(Coupler("batchot"), q0, q1, 16, 200, make_rng(6))
    assert m16 <= m2 + 3 * s2


def test_uniform_cost_flat_in_k():
    q0, q1 = gaussian_sampler(2), gaussian_sampler(2, 1.0, 1.0)
    m2, s2 = mean_coupling_cost(Coupler("uniform"), q0, q1, 2, 300, make_rng(7))
    m32, s32 = mean_coupling_cost(Coupler("uniform"), q0, q1, 32, 300, make_rng(8))
    assert abs(m2 - m32) < 3 * math.hypot(s2, s32)


@pytest.mark.parametrize("kind", ALL)
def test_statistical_marginals(kind):
    n = 100_000 if kind != "batcheot" else 30_000
    q0, q1 = gaussian_sampler(2), gaussian_sampler(2, 2.0, 1.0)
    x0, x1 = sample_joint(Coupler(kind), q0, q1, 64, n, make_rng(21))
    direct = q0(make_rng(22), n)
    for a, b in ((x0, direct),):
        se_mean = np.sqrt(a.var(0) / n + b.var(0) / n)
        assert np.all(np.abs(a.mean(0) - b.mean(0)) < 4 * se_mean)
        # standard error of a sample variance for Gaussian data: var * sqrt(2 / n)
        se_var = np.sqrt(2 * a.var(0) ** 2 / n + 2 * b.var(0) ** 2 / n)
        assert np.all(np.abs(a.var(0) - b.var(0)) < 4 * se_var)
    assert np.all(np.abs(x1.mean(0) - 1.0) < 4 * 2.0 / math.sqrt(n))


def test_iter_joint_truncates(rng):
    blocks = list(iter_joint(Coupler("batchot"), gaussian_sampler(2), gaussian_sampler(2), 8, 20, rng))
    assert [len(b[0]) for b in blocks] == [8, 8, 4]


def test_sample_joint_replay():
    a = sample_joint(Coupler("batcheot"), gaussian_sampler(2), gaussian_sampler(2), 16, 50, make_rng(3))
    b = sample_joint(Coupler("batcheot"), gaussian_sampler(2), gaussian_sampler(2), 16, 50, make_rng(3))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_plan_draws_follow_plan(rng):
    # a fixed 2x2 plan: row 0 goes to column 1 w.p. 0.75
    from msfm.coupling import Coupling
    cp = Coupling("batcheot", 2, plan=np.array([[0.25, 0.75], [0.75, 0.25]]))
    hits = total = 0
    for _ in range(5000):
        i, j = draw_pairs(cp, rng)
        hits += np.sum((i == 0) & (j == 1))
        total += np.sum(i == 0)
    p = hits / total
    assert abs(p - 0.75) < 4 * math.sqrt(0.75 * 0.25 / total)
