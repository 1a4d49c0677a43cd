"""Rank-based couplings: Gale-Shapley stable matching and the cost-aware
heuristic variant that only reassigns a target when the swap lowers cost.

Both proposers are sources (rows of the cost matrix). The unmatched source
with the smallest index always proposes next, and every preference tie is
broken toward the smaller index, so outputs are deterministic.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Rankings:
    """``R0[i]`` lists targets by increasing cost for source ``i``;
    ``R1[j, i]`` is the rank of source ``i`` in target ``j``'s preferences."""

    R0: np.ndarray
    R1: np.ndarray

    @property
    def k(self) -> int:
        return self.R0.shape[0]


def rankings_from_cost(C) -> Rankings:
    C = np.asarray(C, dtype=np.float64)
    k = C.shape[0]
    R0 = np.argsort(C, axis=1, kind="stable")
    by_target = np.argsort(C.T, axis=1, kind="stable")
    R1 = np.empty((k, k), dtype=np.int64)
    R1[np.arange(k)[:, None], by_target] = np.arange(k)[None, :]
    return Rankings(R0, R1)


def stable_coupling(R: Rankings, return_proposals: bool = False):
    """Source-proposing Gale-Shapley; returns ``sigma`` with ``sigma[i]`` the target of ``i``."""
    k = R.k
    R0 = R.R0.tolist()
    R1 = R.R1.tolist()
    sigma = [-1] * k
    holder = [-1] * k
    nxt = [0] * k
    free = list(range(k))
    heapq.heapify(free)
    proposals = 0
    while free:
        i = free[0]
        j = R0[i][nxt[i]]
        nxt[i] += 1
        proposals += 1
        other = holder[j]
        if other < 0:
            heapq.heappop(free)
            sigma[i], holder[j] = j, i
        elif R1[j][i] < R1[j][other]:
            heapq.heapreplace(free, other)
            sigma[other] = -1
            sigma[i], holder[j] = j, i
    sigma = np.array(sigma)
    return (sigma, proposals) if return_proposals else sigma


def heuristic_coupling(R: Rankings, C, return_proposals: bool = False):
    """Gale-Shapley with a cost test in place of the target's rank test.

    Source ``i`` proposing to ``j`` (currently held by ``i2``) takes it over
    iff ``C[i, j] + C[i2, j2] < C[i, l] + C[i2, j]``, where ``j2`` is the next
    target ``i2`` has not yet tried and ``l`` the next one ``i`` has not tried
    after ``j``. A missing ``j2`` counts as +inf (reject), a missing ``l`` as
    +inf (accept). ``l`` is in fact never missing when ``j`` is held: a source
    proposing to its last target finds it free.
    """
    k = R.k
    C = np.asarray(C, dtype=np.float64).tolist()
    R0 = R.R0.tolist()
    sigma = [-1] * k
    holder = [-1] * k
    nxt = [0] * k
    free = list(range(k))
    heapq.heapify(free)
    proposals = 0
    while free:
        i = free[0]
        j = R0[i][nxt[i]]
        nxt[i] += 1
        proposals += 1
        other = holder[j]
        if other < 0:
            heapq.heappop(free)
            sigma[i], holder[j] = j, i
            continue
        j2 = R0[other][nxt[other]] if nxt[other] < k else None
        l = R0[i][nxt[i]] if nxt[i] < k else None
        lhs = C[i][j] + (C[other][j2] if j2 is not None else math.inf)
        rhs = (C[i][l] if l is not None else math.inf) + C[other][j]
        if lhs < rhs:
            heapq.heapreplace(free, other)
            sigma[other] = -1
            sigma[i], holder[j] = j, i
    sigma = np.array(sigma)
    return (sigma, proposals) if return_proposals else sigma


def count_blocking_pairs(sigma, R: Rankings) -> int:
    """Number of (i, j) where both prefer each other to their assigned partners."""
    sigma = np.asarray(sigma)
    k = R.k
    rank0 = np.empty((k, k), dtype=np.int64)
    rank0[np.arange(k)[:, None], R.R0] = np.arange(k)[None, :]
    inverse = np.empty(k, dtype=np.int64)
    inverse[sigma] = np.arange(k)
    src_wants = rank0 < rank0[np.arange(k), sigma][:, None]
    tgt_wants = R.R1.T < R.R1[np.arange(k), inverse][None, :]
    return int(np.count_nonzero(src_wants & tgt_wants))
