"""ODE integration of learned vector fields and log-density evaluation.

Every integrator works on a batch of states ``(n, d)`` sharing one time grid.
A field is any callable ``field(t, x) -> dx/dt`` with scalar ``t``. The
``nfe`` reported in a :class:`Trajectory` is the exact number of field calls.

The adaptive method is the Dormand-Prince 5(4) pair with FSAL reuse, a PI step
controller and Hairer's automatic initial step. The error norm is the RMS of
``err / (atol + rtol * max(|y|, |y_new|))`` per sample, maximized over the batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .data import GMM, gmm_log_density, save_batch
from .errors import ConfigError, NumericalError, StepUnderflowError

METHODS = ("euler", "midpoint", "rk4", "adaptive54")
_STAGES = {"euler": 1, "midpoint": 2, "rk4": 4}
MIN_STEP = 1e-12

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_LOW = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B_LOW


@dataclass(frozen=True)
class IntegrateOpts:
    """``nfe`` fixes the budget of fixed-step methods; ``atol``/``rtol`` drive
    the adaptive one."""

    method: str = "adaptive54"
    nfe: int | None = None
    atol: float = 1e-5
    rtol: float = 1e-5
    t_span: tuple = (0.0, 1.0)
    record_trajectory: bool = False
    max_steps: int = 100_000

    def __post_init__(self):
        method = self.method.lower()
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "t_span", (float(self.t_span[0]), float(self.t_span[1])))
        if method not in METHODS:
            raise ConfigError(f"unknown integration method {self.method!r}; expected one of {METHODS}")
        if method == "adaptive54":
            if not (self.atol > 0 and self.rtol > 0):
                raise ConfigError("atol and rtol must be positive")
        else:
            s = _STAGES[method]
            if self.nfe is None or self.nfe < s or self.nfe % s:
                raise ConfigError(f"{method} needs an NFE budget that is a positive multiple of {s}")

    @property
    def steps(self) -> int | None:
        return None if self.method == "adaptive54" else self.nfe // _STAGES[self.method]


@dataclass
class Trajectory:
    times: np.ndarray
    states: list = dc_field(repr=False)
    nfe: int = 0
    n_accepted: int = 0
    n_rejected: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


class _Counted:
    def __init__(self, f):
        self.f = f
        self.n = 0

    def __call__(self, t, x):
        self.n += 1
        out = np.asarray(self.f(t, x), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"vector field returned NaN or inf at t={t:.6g}", step=self.n)
        return out


def _fixed_step(f, method, x, t0, t1, steps, record):
    h = (t1 - t0) / steps
    times, states = [t0], [x]
    for i in range(steps):
        t = t0 + i * h
        if method == "euler":
            x = x + h * f(t, x)
        elif method == "midpoint":
            x = x + h * f(t + 0.5 * h, x + 0.5 * h * f(t, x))
        else:
            k1 = f(t, x)
            k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
            k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
            k4 = f(t + h, x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if record:
            times.append(t0 + (i + 1) * h)
            states.append(x)
    if not record:
        times.append(t1)
        states.append(x)
    times[-1] = t1
    return times, states, steps, 0


def _norm(err, y0, y1, atol, rtol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    per_sample = np.sqrt(np.mean((err / scale) ** 2, axis=-1))
    return float(np.max(per_sample))


def _initial_step(f, t0, y0, f0, direction, atol, rtol):
    # Hairer, Norsett & Wanner, Solving ODEs I, Sec. II.4
    scale = atol + np.abs(y0) * rtol
    d0 = float(np.max(np.sqrt(np.mean((y0 / scale) ** 2, axis=-1))))
    d1 = float(np.max(np.sqrt(np.mean((f0 / scale) ** 2, axis=-1))))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = f(t0 + direction * h0, y1)
    d2 = float(np.max(np.sqrt(np.mean(((f1 - f0) / scale) ** 2, axis=-1)))) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def _adaptive(f, x, t0, t1, atol, rtol, record, max_steps):
    safety, fac_min, fac_max = 0.9, 0.2, 10.0
    alpha, beta = 0.7 / 5, 0.4 / 5
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    times, states = [t0], [x]
    if span == 0.0:
        return [t0, t1], [x, x], 0, 0
    t = t0
    k1 = f(t, x)
    h = min(_initial_step(f, t0, x, k1, direction, atol, rtol), span)
    prev_err = 1e-4
    accepted = rejected = 0
    while direction * (t1 - t) > 0:
        if accepted + rejected >= max_steps:
            raise NumericalError(f"adaptive solver exceeded {max_steps} steps", step=accepted)
        if h < MIN_STEP:
            raise StepUnderflowError(f"step size fell below {MIN_STEP:g} at t={t:.6g}", step=accepted)
        last = h >= abs(t1 - t)
        if last:
            h = abs(t1 - t)
        hs = direction * h
        ks = [k1]
        for s in range(1, 7):
            y_stage = x + hs * sum(a * ks[j] for j, a in enumerate(_A[s]) if a != 0.0)
            ks.append(f(t + _C[s] * hs, y_stage))
        # stage 7 is evaluated at the 5th-order solution (FSAL)
        x_new = x + hs * sum(b * ks[j] for j, b in enumerate(_B) if b != 0.0)
        err_vec = hs * sum(e * ks[j] for j, e in enumerate(_E) if e != 0.0)
        err = _norm(err_vec, x, x_new, atol, rtol)
        if not math.isfinite(err):
            raise NumericalError("non-finite local error estimate", step=accepted)
        if err <= 1.0:
            accepted += 1
            t = t1 if last else t + hs
            x = x_new
            k1 = ks[6]
            if record:
                times.append(t)
                states.append(x)
            err = max(err, 1e-10)
            factor = min(fac_max, max(fac_min, safety * err ** -alpha * prev_err ** beta))
            prev_err = err
            h *= factor
        else:
            rejected += 1
            h *= max(fac_min, safety * err ** (-1 / 5))
    if not record:
        times.append(t1)
        states.append(x)
    times[-1] = t1
    return times, states, accepted, rejected


def integrate(field, x0, opts: IntegrateOpts = IntegrateOpts()) -> Trajectory:
    """Solve ``dx/dt = field(t, x)`` from ``t_span[0]`` to ``t_span[1]``.

    ``x0`` is a point ``(d,)`` or a batch ``(n, d)``; states keep its shape.
    Integration backwards in time is allowed (``t_span[1] < t_span[0]``).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise NumericalError("initial state contains NaN or inf")
    f = _Counted(field)
    t0, t1 = opts.t_span
    if opts.method == "adaptive54":
        times, states, acc, rej = _adaptive(f, x0, t0, t1, opts.atol, opts.rtol,
                                            opts.record_trajectory, opts.max_steps)
    else:
        times, states, acc, rej = _fixed_step(f, opts.method, x0, t0, t1, opts.steps,
                                              opts.record_trajectory)
    return Trajectory(np.array(times), states, f.n, acc, rej)


def integrate_with_logdet(field_div, x, direction: str = "forward",
                          opts: IntegrateOpts = IntegrateOpts()):
    """Integrate the state together with the log-density change.

    ``field_div(t, x)`` returns ``(v, div)`` for a batch. ``forward`` runs
    ``t: 0 -> 1`` and ``backward`` runs ``t: 1 -> 0``. The returned
    ``delta_logp`` is the change in log density along the direction of travel,
    ``-int div dt`` taken from start to end time, so forward gives
    ``log p1(x1) - log p0(x0)`` and backward ``log p0(z) - log p1(x)``.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    d = x.shape[1]
    lo, hi = sorted(opts.t_span)
    span = (lo, hi) if direction == "forward" else (hi, lo)

    def aug(t, z):
        v, div = field_div(t, z[:, :d])
        return np.concatenate([v, -np.asarray(div)[:, None]], axis=1)

    z0 = np.concatenate([x, np.zeros((x.shape[0], 1))], axis=1)
    o = IntegrateOpts(opts.method, opts.nfe, opts.atol, opts.rtol, span, False, opts.max_steps)
    traj = integrate(aug, z0, o)
    end, dlogp = traj.final[:, :d], traj.final[:, d]
    if single:
        return end[0], float(dlogp[0])
    return end, dlogp


def model_field(model):
    """The model as a plain ``field(t, x)``."""
    return lambda t, x: model.forward(x, t)


def model_field_div(model):
    return lambda t, x: model.velocity_and_divergence(x, t)


def base_log_density(base: GMM, x) -> np.ndarray:
    return gmm_log_density(base, x)


def model_log_density(model, base: GMM, x, opts: IntegrateOpts = IntegrateOpts()):
    """``log`` of the push-forward of ``base`` through the time-1 flow, at ``x``.

    Integrates backwards to ``t = 0`` and adds the base log-density there.
    """
    z, delta = integrate_with_logdet(model_field_div(model), x, "backward", opts)
    return base_log_density(base, z) - delta


def sample_flow(model, x0, opts: IntegrateOpts = IntegrateOpts()) -> np.ndarray:
    """Push ``x0`` through the flow to ``t = 1``."""
    return integrate(model_field(model), x0, opts).final


def save_trajectory(path, traj: Trajectory) -> None:
    """CSV with columns ``t, x1..xd``; batched trajectories write every
    sample per recorded time, in sample order."""
    rows = []
    for t, s in zip(traj.times, traj.states):
        s = np.atleast_2d(s)
        rows.append(np.concatenate([np.full((s.shape[0], 1), t), s], axis=1))
    d = rows[0].shape[1] - 1
    save_batch(path, np.concatenate(rows), header="t," + ",".join(f"x{i + 1}" for i in range(d)))
