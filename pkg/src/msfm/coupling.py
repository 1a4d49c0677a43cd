"""Multisample joint distributions.

A joint sample is built in three steps: draw ``k`` points from each marginal,
couple the two batches with a doubly stochastic matrix (or a permutation),
then emit pairs from the resulting discrete distribution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import matching, ot
from .cost import CostFn, cost_matrix, pair_costs
from .data import Sampler
from .errors import ConfigError, ShapeError

KINDS = ("uniform", "batchot", "batcheot", "stable", "heuristic")
_ALIASES = {"condot": "uniform", "independent": "uniform", "ot": "batchot",
            "eot": "batcheot", "sinkhorn": "batcheot"}


@dataclass(frozen=True)
class Coupler:
    """Which coupling to build per batch.

    For ``batcheot`` the regularization is ``epsilon`` if given, otherwise
    ``epsilon_scale * mean(C)`` of each batch's cost matrix.
    """

    kind: str = "uniform"
    cost: CostFn = field(default_factory=CostFn)
    epsilon: float | None = None
    epsilon_scale: float = 0.1
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 5000

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in KINDS:
            raise ConfigError(f"unknown coupler {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("BatchEOT epsilon must be positive")
        if not self.epsilon_scale > 0:
            raise ConfigError("epsilon_scale must be positive")

    @property
    def is_permutation(self) -> bool:
        return self.kind in ("batchot", "stable", "heuristic")


@dataclass
class Coupling:
    """Result of coupling one batch pair: a permutation or a plan, plus diagnostics."""

    kind: str
    k: int
    sigma: np.ndarray | None = None
    plan: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def matrix(self) -> np.ndarray:
        if self.sigma is not None:
            return ot.permutation_matrix(self.sigma)
        return self.plan


def compute_coupling(c: Coupler, X0, X1) -> Coupling:
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    if X0.shape != X1.shape:
        raise ShapeError(f"source batch {X0.shape} and target batch {X1.shape} differ")
    k = X0.shape[0]
    if c.kind == "uniform":
        return Coupling("uniform", k, plan=np.full((k, k), 1.0 / k))
    C = cost_matrix(X0, X1, c.cost)
    if c.kind == "batchot":
        sigma, total = ot.solve_exact_assignment(C)
        return Coupling(c.kind, k, sigma=sigma, info={"total_cost": total})
    if c.kind == "batcheot":
        eps = c.epsilon if c.epsilon is not None else c.epsilon_scale * float(C.mean())
        if eps <= 0:
            # all costs zero: every plan is optimal, use the independent one
            return Coupling(c.kind, k, plan=np.full((k, k), 1.0 / k), info={"epsilon": 0.0})
        res = ot.sinkhorn(C, eps, max_iter=c.sinkhorn_max_iter, tol=c.sinkhorn_tol)
        return Coupling(c.kind, k, plan=res.pi, info={
            "epsilon": eps, "converged": res.converged, "iterations": res.n_iter,
            "marginal_error": res.marginal_error, "total_cost": float((res.pi * C).sum())})
    R = matching.rankings_from_cost(C)
    if c.kind == "stable":
        sigma, n_prop = matching.stable_coupling(R, return_proposals=True)
        info = {"blocking_pairs": matching.count_blocking_pairs(sigma, R)}
    else:
        sigma, n_prop = matching.heuristic_coupling(R, C, return_proposals=True)
        info = {}
    info.update(proposals=n_prop, total_cost=ot.assignment_cost(C, sigma))
    return Coupling(c.kind, k, sigma=sigma, info=info)


def coupling_matrix(c: Coupler, X0, X1) -> np.ndarray:
    """Doubly stochastic matrix (rows and columns sum to one) for one batch pair."""
    return compute_coupling(c, X0, X1).matrix()


def draw_pairs(coupling: Coupling, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Source and target indices of the ``k`` pairs emitted for one batch.

    Permutations emit their ``k`` matched pairs. The uniform coupling emits the
    identity pairing, which for i.i.d. batches has the same law as any draw
    from the independent plan. Other plans draw ``i`` uniformly and then
    ``j ~ plan[i, :]``, ``k`` times with replacement.
    """
    k = coupling.k
    rows = np.arange(k)
    if coupling.sigma is not None:
        return rows, coupling.sigma
    if coupling.kind == "uniform":
        return rows, rows
    i = rng.integers(0, k, size=k)
    cdf = np.cumsum(coupling.plan[i], axis=1)
    u = rng.random(k) * cdf[:, -1]
    j = np.minimum((cdf < u[:, None]).sum(axis=1), k - 1)
    return i, j


def iter_joint(c: Coupler, q0: Sampler, q1: Sampler, k: int, n_pairs: int,
               rng: np.random.Generator) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield coupled ``(x0, x1)`` blocks of ``k`` pairs until ``n_pairs`` are emitted.

    The last block is truncated if ``n_pairs`` is not a multiple of ``k``.
    """
    if k < 1:
        raise ValueError("coupling batch size k must be >= 1")
    emitted = 0
    while emitted < n_pairs:
        X0 = q0(rng, k)
        X1 = q1(rng, k)
        i, j = draw_pairs(compute_coupling(c, X0, X1), rng)
        take = min(k, n_pairs - emitted)
        yield X0[i[:take]], X1[j[:take]]
        emitted += take


def sample_joint(c: Coupler, q0: Sampler, q1: Sampler, k: int, n_pairs: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``n_pairs`` coupled pairs drawn from ``ceil(n_pairs / k)`` independent k-batches.

    All source and target points are drawn up front and partitioned into
    consecutive blocks of ``k``, each coupled separately.
    """
    if k < 1:
        raise ValueError("coupling batch size k must be >= 1")
    n_blocks = -(-n_pairs // k)
    X0 = q0(rng, n_blocks * k)
    X1 = q1(rng, n_blocks * k)
    src, tgt = [], []
    for b in range(n_blocks):
        sl = slice(b * k, (b + 1) * k)
        i, j = draw_pairs(compute_coupling(c, X0[sl], X1[sl]), rng)
        src.append(X0[sl][i])
        tgt.append(X1[sl][j])
    return np.concatenate(src)[:n_pairs], np.concatenate(tgt)[:n_pairs]


def mean_coupling_cost(c: Coupler, q0: Sampler, q1: Sampler, k: int, resamples: int,
                       rng: np.random.Generator, fn: CostFn | None = None) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the per-pair cost under the coupling.

    Each resample couples a fresh k-batch; its mean pair cost (measured with
    ``fn``, default squared Euclidean) is one observation. Plans are
    evaluated exactly as ``sum(plan * C) / k`` rather than by drawing pairs.
    """
    if resamples < 2:
        raise ValueError("need at least two resamples for a standard error")
    fn = fn or CostFn("sqeuclidean")
    vals = np.empty(resamples)
    for r in range(resamples):
        X0 = q0(rng, k)
        X1 = q1(rng, k)
        cp = compute_coupling(c, X0, X1)
        if cp.sigma is not None:
            vals[r] = pair_costs(X0, X1[cp.sigma], fn).mean()
        else:
            vals[r] = float((cp.plan * cost_matrix(X0, X1, fn)).sum()) / k
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(resamples))
