"""Straight-line conditional paths and the regression objectives built on them.

For a coupled pair ``(x0, x1)`` the conditional flow is
``x_t = (1 - t) x0 + t x1`` with constant target velocity ``x1 - x0``. The
joint objective regresses a time-conditioned network onto that target at a
uniform random ``t``; the static objective regresses a time-free map
``psi(x0)`` directly onto ``x1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupling import Coupler, sample_joint
from .data import Sampler
from .errors import EmptyBatchError, ShapeError
from .nn import VectorFieldModel, loss_and_grad


def _check_t(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t must lie in [0, 1]")
    return t


def cond_flow(x0, x1, t):
    """``(1 - t) x0 + t x1``. ``t`` is a scalar or one value per row."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"shape mismatch {x0.shape} vs {x1.shape}")
    t = _check_t(t)
    if t.ndim == 1 and x0.ndim == 2:
        t = t[:, None]
    return (1.0 - t) * x0 + t * x1


def cond_target_vf(x0, x1):
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"shape mismatch {x0.shape} vs {x1.shape}")
    return x1 - x0


@dataclass
class TrainSamples:
    """Column-stacked training samples: row ``i`` is one ``(x0, x1, t, x_t, u)``."""

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    target: np.ndarray

    def __len__(self):
        return len(self.t)

    def subset(self, idx) -> "TrainSamples":
        return TrainSamples(self.x0[idx], self.x1[idx], self.t[idx], self.xt[idx], self.target[idx])


def make_train_samples(x0, x1, rng: np.random.Generator) -> TrainSamples:
    """One ``t ~ U[0, 1]`` per pair, with the path point and target filled in."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    if x0.shape[0] == 0:
        raise EmptyBatchError("no pairs to train on")
    t = rng.random(x0.shape[0])
    return TrainSamples(x0, x1, t, cond_flow(x0, x1, t), cond_target_vf(x0, x1))


def jcfm_loss(model: VectorFieldModel, samples: TrainSamples) -> tuple[float, np.ndarray]:
    """Mean of ``||v_t(x_t) - (x1 - x0)||^2`` over the samples, with its gradient."""
    def closure(net):
        r = net(samples.xt, samples.t) - samples.target
        return (r * r).sum(axis=1).mean()
    return loss_and_grad(model, closure)


def jcfm_value(model: VectorFieldModel, samples: TrainSamples) -> np.ndarray:
    """Per-sample squared errors without building a graph."""
    r = model(samples.xt, samples.t) - samples.target
    return np.einsum("ij,ij->i", r, r)


def barycentric_loss(model: VectorFieldModel, x0, x1) -> tuple[float, np.ndarray]:
    """Mean of ``||psi(x0) - x1||^2`` for a time-free model ``psi``."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    if x0.shape != x1.shape:
        raise ShapeError(f"shape mismatch {x0.shape} vs {x1.shape}")

    def closure(net):
        r = net(x0) - x1
        return (r * r).sum(axis=1).mean()
    return loss_and_grad(model, closure)


def variance_proxy(model: VectorFieldModel, coupler: Coupler, q0: Sampler, q1: Sampler,
                   k: int, n_batches: int, rng: np.random.Generator):
    """Monte Carlo joint-objective value at fixed parameters.

    Each of ``n_batches`` independent k-batches is coupled, given fresh times
    and scored; the batch means are the observations behind the standard error.
    """
    from .metrics import MetricReport
    if n_batches < 2:
        raise ValueError("need at least two batches for a standard error")
    vals = np.empty(n_batches)
    for b in range(n_batches):
        x0, x1 = sample_joint(coupler, q0, q1, k, k, rng)
        vals[b] = jcfm_value(model, make_train_samples(x0, x1, rng)).mean()
    return MetricReport.from_samples("variance_proxy", vals)
