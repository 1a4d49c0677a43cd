"""Minibatch assignment (exact OT) and entropic OT solvers.

Couplings between two equal-size batches are represented either as a
permutation ``sigma`` (source ``i`` goes to target ``sigma[i]``) or as a
``k x k`` doubly stochastic matrix whose rows and columns each sum to one,
i.e. ``k`` times the transport plan with uniform ``1/k`` marginals.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import NumericalError, ShapeError

BRUTE_FORCE_MAX_K = 8


def _check_square(C) -> np.ndarray:
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ShapeError(f"cost matrix must be square, got shape {C.shape}")
    if C.shape[0] == 0:
        raise ShapeError("cost matrix is empty")
    return C


def assignment_cost(C, sigma) -> float:
    C = _check_square(C)
    sigma = np.asarray(sigma)
    if sigma.shape != (C.shape[0],):
        raise ShapeError(f"permutation of length {sigma.shape} for a {C.shape} cost matrix")
    return float(C[np.arange(len(sigma)), sigma].sum())


def is_permutation(sigma, k: int | None = None) -> bool:
    sigma = np.asarray(sigma)
    k = len(sigma) if k is None else k
    return sigma.shape == (k,) and np.array_equal(np.sort(sigma), np.arange(k))


def permutation_matrix(sigma) -> np.ndarray:
    k = len(sigma)
    P = np.zeros((k, k))
    P[np.arange(k), sigma] = 1.0
    return P


def brute_force_assignment(C) -> tuple[np.ndarray, float]:
    """Enumerate all k! permutations; ties go to the lexicographically smallest."""
    C = _check_square(C)
    k = C.shape[0]
    if k > BRUTE_FORCE_MAX_K:
        raise ValueError(f"brute force is limited to k <= {BRUTE_FORCE_MAX_K}, got {k}")
    rows = np.arange(k)
    best, best_cost = None, math.inf
    # itertools yields permutations in lexicographic order; strict < keeps the first
    for perm in itertools.permutations(range(k)):
        total = C[rows, perm].sum()
        if total < best_cost:
            best, best_cost = perm, total
    return np.array(best), float(best_cost)


def _shortest_augmenting_path(C: np.ndarray) -> np.ndarray:
    """Dense shortest-augmenting-path (Jonker-Volgenant family) solver, O(k^3).

    One Dijkstra search over reduced costs per row, with dual variables ``u``
    (rows) and ``v`` (columns) kept feasible throughout.
    """
    k = C.shape[0]
    u = np.zeros(k)
    v = np.zeros(k)
    col4row = np.full(k, -1)
    row4col = np.full(k, -1)
    all_rows = np.arange(k)
    for cur in range(k):
        shortest = np.full(k, np.inf)
        path = np.full(k, -1)
        seen_rows = np.zeros(k, dtype=bool)
        seen_cols = np.zeros(k, dtype=bool)
        i, min_val, sink = cur, 0.0, -1
        while sink < 0:
            seen_rows[i] = True
            reduced = min_val + C[i] - u[i] - v
            better = ~seen_cols & (reduced < shortest)
            shortest[better] = reduced[better]
            path[better] = i
            cand = np.where(seen_cols, np.inf, shortest)
            min_val = cand.min()
            if not np.isfinite(min_val):
                raise NumericalError("assignment problem is infeasible")
            ties = np.flatnonzero(cand == min_val)
            free = ties[row4col[ties] < 0]
            j = int(free[0] if free.size else ties[0])
            seen_cols[j] = True
            if row4col[j] < 0:
                sink = j
            else:
                i = int(row4col[j])
        u[cur] += min_val
        others = seen_rows & (all_rows != cur)
        u[others] += min_val - shortest[col4row[others]]
        v[seen_cols] -= min_val - shortest[seen_cols]
        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break
    return col4row


def solve_exact_assignment(C, method: str = "scipy") -> tuple[np.ndarray, float]:
    """Minimum-cost perfect assignment on a square cost matrix.

    ``method="scipy"`` delegates to :func:`scipy.optimize.linear_sum_assignment`;
    ``method="sap"`` runs the in-package shortest augmenting path solver.
    Both are exact. Returns ``(sigma, total_cost)``.
    """
    C = _check_square(C)
    if not np.all(np.isfinite(C)):
        raise NumericalError("cost matrix contains NaN or inf")
    if method == "scipy":
        rows, cols = linear_sum_assignment(C)
        sigma = np.empty_like(cols)
        sigma[rows] = cols
    elif method == "sap":
        sigma = _shortest_augmenting_path(C)
    else:
        raise ValueError(f"unknown assignment method {method!r}")
    return sigma, assignment_cost(C, sigma)


@dataclass
class SinkhornResult:
    pi: np.ndarray
    converged: bool
    n_iter: int
    marginal_error: float
    f: np.ndarray
    g: np.ndarray


def _log_sweep(C, f, g, eps, log_k):
    f = -eps * (log_k + logsumexp((g[None, :] - C) / eps, axis=1))
    g = -eps * (log_k + logsumexp((f[:, None] - C) / eps, axis=0))
    return f, g


def sinkhorn(C, epsilon: float, max_iter: int = 10_000, tol: float = 1e-9,
             eps_scaling: float | None = 0.5, check_every: int = 5) -> SinkhornResult:
    """Entropic OT between uniform marginals with log-domain dual potentials.

    The dual potentials ``f`` (rows) and ``g`` (columns) live in the log
    domain. Inner iterations run on the stabilized kernel
    ``K = exp((f_i + g_j - C_ij) / eps)`` with scalings ``u, v``; whenever a
    scaling leaves ``[e^-30, e^30]`` it is absorbed into the potentials, and
    each regularization stage starts with an exact log-sum-exp sweep, so
    nothing under- or overflows even for tiny ``epsilon``.

    Stops when the largest row-sum violation of the rescaled plan is below
    ``tol`` (columns are exact after every sweep) or after ``max_iter`` sweeps.
    With ``eps_scaling`` set, the regularization starts at ``max(C)`` and is
    multiplied by that factor per stage until it reaches ``epsilon``; the
    fixed point is unchanged, only reached faster.

    Returns the plan scaled by ``k`` so that rows and columns sum to one.
    """
    C = _check_square(C)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not np.all(np.isfinite(C)):
        raise NumericalError("cost matrix contains NaN or inf")
    k = C.shape[0]
    log_k = math.log(k)
    f = np.zeros(k)
    g = np.zeros(k)

    schedule = [float(epsilon)]
    if eps_scaling is not None and 0 < eps_scaling < 1:
        e = float(C.max())
        stages = []
        while e > epsilon:
            stages.append(e)
            e *= eps_scaling
        schedule = stages + [float(epsilon)]

    n_iter, err = 0, math.inf
    K = u = v = None
    for stage, eps in enumerate(schedule):
        final = stage == len(schedule) - 1
        budget = max_iter - n_iter if final else min(10, max_iter - n_iter)
        f, g = _log_sweep(C, f, g, eps, log_k)
        n_iter += 1
        K = np.exp((f[:, None] + g[None, :] - C) / eps)
        u = np.ones(k)
        v = np.ones(k)
        for it in range(1, budget):
            u = 1.0 / (k * (K @ v))
            v = 1.0 / (k * (K.T @ u))
            n_iter += 1
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                f, g = _log_sweep(C, f, g, eps, log_k)
                K = np.exp((f[:, None] + g[None, :] - C) / eps)
                u = np.ones(k)
                v = np.ones(k)
                continue
            if final and (it % check_every == 0 or it == budget - 1):
                err = float(np.max(np.abs(k * u * (K @ v) - 1.0)))
                if err < tol:
                    break
            if np.max(np.abs(np.log(u))) > 30 or np.max(np.abs(np.log(v))) > 30:
                f = f + eps * np.log(u)
                g = g + eps * np.log(v)
                K = np.exp((f[:, None] + g[None, :] - C) / eps)
                u = np.ones(k)
                v = np.ones(k)
        if final:
            f = f + eps * np.log(u)
            g = g + eps * np.log(v)
    pi = np.exp((f[:, None] + g[None, :] - C) / epsilon + log_k)
    if not np.all(np.isfinite(pi)):
        raise NumericalError("Sinkhorn produced non-finite plan entries")
    err = float(max(np.max(np.abs(pi.sum(axis=1) - 1.0)), np.max(np.abs(pi.sum(axis=0) - 1.0))))
    return SinkhornResult(pi, err < tol, n_iter, err, f, g)
