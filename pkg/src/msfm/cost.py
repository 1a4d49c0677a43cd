"""Pairwise cost functions c(x0, x1) and cost-matrix assembly."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, CostDomainError, ShapeError

KINDS = ("sqeuclidean", "l1", "cosine", "weighted_sq")
_ALIASES = {
    "squared": "sqeuclidean", "squared_euclidean": "sqeuclidean", "l2sq": "sqeuclidean",
    "cityblock": "l1", "manhattan": "l1",
    "cosine_distance": "cosine",
    "weighted": "weighted_sq", "weighted_squared": "weighted_sq",
}
ZERO_NORM = 1e-12


@dataclass(frozen=True)
class CostFn:
    kind: str = "sqeuclidean"
    A: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ConfigError(f"unknown cost kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "weighted_sq":
            if self.A is None:
                raise ConfigError("weighted_sq cost requires a matrix A")
            A = np.asarray(self.A, dtype=np.float64)
            if A.ndim != 2 or not np.all(np.isfinite(A)):
                raise ConfigError("A must be a finite 2-D matrix")
            object.__setattr__(self, "A", A)

    def __call__(self, x0, x1) -> float:
        return eval_cost(self, x0, x1)


def random_weight_matrix(d: int, rng: np.random.Generator) -> np.ndarray:
    """Entries uniform in [-1, 1]; the matrix for ``weighted_sq`` experiments."""
    return rng.uniform(-1.0, 1.0, size=(d, d))


def cost_from_tag(tag: str, matrix_path: str | Path | None = None,
                  d: int | None = None, seed: int | None = None) -> CostFn:
    """Build a cost from its config form: a tag plus an optional matrix source.

    For ``weighted_sq`` the matrix is read from ``matrix_path`` (CSV) if given,
    otherwise generated from ``seed`` with :func:`random_weight_matrix`.
    """
    kind = _ALIASES.get(tag, tag)
    if kind != "weighted_sq":
        return CostFn(kind)
    if matrix_path is not None:
        from .data import load_batch
        return CostFn(kind, load_batch(matrix_path))
    if d is None or seed is None:
        raise ConfigError("weighted_sq needs either a matrix file or (dimension, seed)")
    from .data import make_rng
    return CostFn(kind, random_weight_matrix(d, make_rng(seed)))


def eval_cost(fn: CostFn, x0, x1) -> float:
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"shape mismatch {x0.shape} vs {x1.shape}")
    diff = x1 - x0
    if fn.kind == "sqeuclidean":
        return float(np.dot(diff, diff))
    if fn.kind == "l1":
        return float(np.sum(np.abs(diff)))
    if fn.kind == "weighted_sq":
        r = fn.A @ diff
        return float(np.dot(r, r))
    n0, n1 = np.linalg.norm(x0), np.linalg.norm(x1)
    if n0 < ZERO_NORM or n1 < ZERO_NORM:
        raise CostDomainError("cosine cost is undefined for zero-norm vectors")
    return float(1.0 - np.dot(x0, x1) / (n0 * n1))


def cost_matrix(X0, X1, fn: CostFn) -> np.ndarray:
    """``C[i, j] = c(X0[i], X1[j])``."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    if X0.shape != X1.shape:
        raise ShapeError(f"source batch {X0.shape} and target batch {X1.shape} differ")
    if fn.kind == "sqeuclidean":
        return cdist(X0, X1, "sqeuclidean")
    if fn.kind == "l1":
        return cdist(X0, X1, "cityblock")
    if fn.kind == "weighted_sq":
        return cdist(X0 @ fn.A.T, X1 @ fn.A.T, "sqeuclidean")
    if (np.linalg.norm(X0, axis=1) < ZERO_NORM).any() or (np.linalg.norm(X1, axis=1) < ZERO_NORM).any():
        raise CostDomainError("cosine cost is undefined for zero-norm vectors")
    return cdist(X0, X1, "cosine")


def pair_costs(x0, x1, fn: CostFn) -> np.ndarray:
    """Row-wise costs ``c(x0[i], x1[i])`` for already-paired batches."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    if x0.shape != x1.shape:
        raise ShapeError(f"shape mismatch {x0.shape} vs {x1.shape}")
    diff = x1 - x0
    if fn.kind == "sqeuclidean":
        return np.einsum("ij,ij->i", diff, diff)
    if fn.kind == "l1":
        return np.abs(diff).sum(axis=1)
    if fn.kind == "weighted_sq":
        r = diff @ fn.A.T
        return np.einsum("ij,ij->i", r, r)
    n0 = np.linalg.norm(x0, axis=1)
    n1 = np.linalg.norm(x1, axis=1)
    if (n0 < ZERO_NORM).any() or (n1 < ZERO_NORM).any():
        raise CostDomainError("cosine cost is undefined for zero-norm vectors")
    return 1.0 - np.einsum("ij,ij->i", x0, x1) / (n0 * n1)
