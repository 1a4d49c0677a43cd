"""Seeded randomness, synthetic distributions and dataset CSV IO.

All randomness goes through :class:`numpy.random.Generator` backed by the
Philox-4x64 counter-based bit generator. A generator made by :func:`make_rng`
remembers its :class:`~numpy.random.SeedSequence`, so :func:`split` can derive
child streams from ``(seed, spawn_key + (index,))`` without touching the
parent's state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import DataFormatError, EmptyBatchError, ShapeError

Sampler = Callable[[np.random.Generator, int], np.ndarray]


def make_rng(seed: int) -> np.random.Generator:
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def split(rng: np.random.Generator, index: int) -> np.random.Generator:
    """Child stream ``index`` of ``rng``.

    Deterministic in (parent seed, parent spawn key, index); the parent's draw
    position is irrelevant, so ``split(rng, 3)`` always yields the same stream.
    """
    ss = rng.bit_generator.seed_seq
    child = np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (int(index),))
    return np.random.Generator(np.random.Philox(child))


def as_batch(points, dim: int | None = None) -> np.ndarray:
    """Validate and return a ``(k, d)`` float64 array."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {x.shape}")
    if x.shape[0] == 0:
        raise EmptyBatchError("batch has no points")
    if x.shape[1] == 0:
        raise ShapeError("batch has zero dimensions")
    if dim is not None and x.shape[1] != dim:
        raise ShapeError(f"expected dimension {dim}, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("batch contains non-finite values")
    return x


# --- checkerboard ---------------------------------------------------------

def checkerboard_cells(half_width: float = 2.0) -> np.ndarray:
    """Lower-left corners of the 8 occupied cells of the 4x4 board on [-h, h]^2.

    Cell ``(i, j)`` (column ``i``, row ``j``, both counted from the lower-left)
    is occupied iff ``i + j`` is even.
    """
    side = half_width / 2.0
    corners = [(-half_width + i * side, -half_width + j * side)
               for j in range(4) for i in range(4) if (i + j) % 2 == 0]
    return np.array(corners)


def sample_checkerboard(rng: np.random.Generator, n: int, half_width: float = 2.0) -> np.ndarray:
    if n < 1:
        raise EmptyBatchError("checkerboard sample size must be >= 1")
    corners = checkerboard_cells(half_width)
    side = half_width / 2.0
    cell = rng.integers(0, len(corners), size=n)
    return corners[cell] + side * rng.random((n, 2))


def in_checkerboard(x: np.ndarray, half_width: float = 2.0) -> np.ndarray:
    """Boolean mask of points lying in an occupied checkerboard cell."""
    x = np.asarray(x, dtype=np.float64)
    side = half_width / 2.0
    idx = np.floor((x + half_width) / side)
    inside = np.all((x >= -half_width) & (x <= half_width), axis=1)
    idx = np.clip(idx, 0, 3)
    return inside & ((idx[:, 0] + idx[:, 1]) % 2 == 0)


# --- Gaussian mixtures ----------------------------------------------------

@dataclass(frozen=True)
class GMM:
    """Isotropic Gaussian mixture: component ``c`` is N(means[c], std[c]^2 I)."""

    weights: np.ndarray
    means: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        s = np.broadcast_to(np.asarray(self.std, dtype=np.float64), w.shape).copy()
        if mu.shape[0] != w.shape[0]:
            raise ShapeError(f"{w.shape[0]} weights but {mu.shape[0]} means")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if not np.all(np.isfinite(mu)):
            raise ValueError("mixture means must be finite")
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise ValueError("mixture std must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "std", s)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def standard_normal(cls, dim: int) -> "GMM":
        return cls(np.ones(1), np.zeros((1, dim)), np.ones(1))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return sample_gmm(self, rng, n)

    def log_density(self, x) -> np.ndarray:
        return gmm_log_density(self, x)


def sample_gmm(gmm: GMM, rng: np.random.Generator, n: int, return_labels: bool = False):
    if n < 1:
        raise EmptyBatchError("GMM sample size must be >= 1")
    labels = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    x = gmm.means[labels] + gmm.std[labels, None] * rng.standard_normal((n, gmm.dim))
    return (x, labels) if return_labels else x


def gmm_log_density(gmm: GMM, x) -> np.ndarray | float:
    """log sum_c w_c N(x; mu_c, std_c^2 I), for one point or an ``(n, d)`` array."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != gmm.dim:
        raise ShapeError(f"point dimension {x.shape[1]} != mixture dimension {gmm.dim}")
    d = gmm.dim
    sq = (np.sum(x**2, axis=1)[:, None] - 2.0 * x @ gmm.means.T
          + np.sum(gmm.means**2, axis=1)[None, :])
    sq = np.maximum(sq, 0.0)
    var = gmm.std**2
    log_comp = (np.log(gmm.weights)[None, :] - 0.5 * sq / var[None, :]
                - 0.5 * d * np.log(2.0 * math.pi * var)[None, :])
    out = logsumexp(log_comp, axis=1)
    return float(out[0]) if single else out


def make_random_gmm(d: int, centers: int, spread: float, std: float,
                    rng: np.random.Generator) -> GMM:
    """Equal-weight mixture with means drawn uniformly from [-spread, spread]^d."""
    if centers < 1:
        raise ValueError("a mixture needs at least one center")
    means = rng.uniform(-spread, spread, size=(centers, d))
    return GMM(np.full(centers, 1.0 / centers), means, np.full(centers, float(std)))


# --- CSV IO ---------------------------------------------------------------

def save_batch(path, batch, header: str | None = None) -> None:
    """Write one point per row; ``repr`` of a float64 round-trips exactly."""
    x = as_batch(batch)
    lines = []
    if header is not None:
        lines.append("# " + header.replace("\n", " "))
    lines.extend(",".join(repr(float(v)) for v in row) for row in x)
    Path(path).write_text("\n".join(lines) + "\n")


def load_batch(path, dim: int | None = None) -> np.ndarray:
    text = Path(path).read_text()
    rows = []
    width = dim
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        if len(cells) != width:
            raise DataFormatError(f"expected {width} columns, found {len(cells)}", row=lineno)
        try:
            values = [float(c) for c in cells]
        except ValueError:
            raise DataFormatError(f"non-numeric cell in {line!r}", row=lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise DataFormatError("non-finite value", row=lineno)
        rows.append(values)
    if not rows:
        raise EmptyBatchError(f"{path} contains no data rows")
    return np.array(rows, dtype=np.float64)


def csv_sampler(points: np.ndarray) -> Sampler:
    """Sampler drawing rows of ``points`` uniformly with replacement."""
    pts = as_batch(points)

    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        return pts[rng.integers(0, len(pts), size=n)]

    return sample
