"""Evaluation metrics for trained flows and static maps.

Every metric is a Monte Carlo mean returned as a :class:`MetricReport` with
its standard error, so trend claims can be checked with :func:`welch_compare`.

Fields passed to the flow metrics are either a :class:`~msfm.nn.VectorFieldModel`
or a callable ``field(t, x)``; ``t`` may be a scalar or an ``(n,)`` array
holding one time per row of ``x``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import gaussian_kde

from .cost import CostFn, pair_costs
from .data import GMM, Sampler, gmm_log_density
from .ode import IntegrateOpts, integrate, model_log_density

DEFAULT_OPTS = IntegrateOpts(atol=1e-5, rtol=1e-5)
REFERENCE_OPTS = IntegrateOpts(atol=1e-7, rtol=1e-7)


@dataclass
class MetricReport:
    name: str
    value: float
    stderr: float
    n: int
    config_hash: str | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, name: str, values, **kw) -> "MetricReport":
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        if n < 2:
            raise ValueError("a standard error needs at least two observations")
        return cls(name, float(values.mean()), float(values.std(ddof=1) / math.sqrt(n)), n, **kw)

    def to_dict(self) -> dict:
        d = {"name": self.name, "value": self.value, "stderr": self.stderr, "n": self.n,
             "config_hash": self.config_hash}
        if self.extra:
            d["extra"] = self.extra
        return d


def welch_compare(a: MetricReport, b: MetricReport, threshold: float = 3.0):
    """``z = (a - b) / sqrt(se_a^2 + se_b^2)`` and whether ``|z| >= threshold``."""
    if a.n < 2 or b.n < 2:
        raise ValueError("both reports need n >= 2")
    diff = a.value - b.value
    se = math.sqrt(a.stderr ** 2 + b.stderr ** 2)
    if se == 0.0:
        z = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    else:
        z = diff / se
    return z, abs(z) >= threshold


def _as_field(model):
    if hasattr(model, "forward"):
        return lambda t, x: model.forward(x, t)
    return model


def straightness(model, q0: Sampler, n: int, rng: np.random.Generator,
                 opts: IntegrateOpts = DEFAULT_OPTS) -> MetricReport:
    """``E_{t, x0}[ ||v_t(phi_t(x0))||^2 - ||phi_1(x0) - x0||^2 ]``.

    Both terms use the same ``x0`` draws. ``phi_t`` at a per-sample time
    ``t_i`` comes from one batched solve of the rescaled system
    ``dz/ds = t_i v(s t_i, z)`` on ``s in [0, 1]``, whose endpoint is
    ``phi_{t_i}(x0_i)``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    f = _as_field(model)
    x0 = q0(rng, n)
    t = rng.random(n)
    x1 = integrate(f, x0, opts).final

    def rescaled(s, z):
        return t[:, None] * f(s * t, z)

    xt = integrate(rescaled, x0, opts).final
    u = f(t, xt)
    disp = x1 - x0
    vals = np.einsum("ij,ij->i", u, u) - np.einsum("ij,ij->i", disp, disp)
    return MetricReport.from_samples("straightness", vals)


def flow_transport_cost(model, q0: Sampler, n: int, rng: np.random.Generator,
                        opts: IntegrateOpts = DEFAULT_OPTS, fn: CostFn | None = None) -> MetricReport:
    """``E c(x0, phi_1(x0))``, squared Euclidean by default."""
    if n < 2:
        raise ValueError("n must be at least 2")
    x0 = q0(rng, n)
    x1 = integrate(_as_field(model), x0, opts).final
    return MetricReport.from_samples("transport_cost", pair_costs(x0, x1, fn or CostFn()))


def static_transport_cost(static_map, q0: Sampler, n: int, rng: np.random.Generator,
                          fn: CostFn | None = None) -> MetricReport:
    """``E c(x0, psi(x0))`` for a time-free map."""
    x0 = q0(rng, n)
    return MetricReport.from_samples("transport_cost", pair_costs(x0, static_map(x0), fn or CostFn()))


def kl_model(q1: GMM, model, base: GMM, n: int, rng: np.random.Generator,
             opts: IntegrateOpts = DEFAULT_OPTS) -> MetricReport:
    """``KL(q1 || flow push-forward of base)`` as ``mean[log q1(x) - log p(x)]``, ``x ~ q1``."""
    x = q1.sample(rng, n)
    vals = gmm_log_density(q1, x) - model_log_density(model, base, x, opts)
    return MetricReport.from_samples("kl", vals)


def kl_static_samplebased(q1: GMM, static_map, q0: Sampler, n: int, rng: np.random.Generator,
                          n_eval: int = 5000) -> MetricReport:
    """``KL(q1 || psi push-forward of q0)`` with the push-forward density replaced
    by a Gaussian KDE (Scott bandwidth) fitted to ``n`` mapped samples.

    A collapsed push-forward (singular sample covariance) yields value ``inf``
    with the reason in ``extra["diagnostic"]``.
    """
    pushed = static_map(q0(rng, n))
    x = q1.sample(rng, n_eval)
    eig = np.linalg.eigvalsh(np.atleast_2d(np.cov(pushed.T)))
    if eig.min() <= 1e-12 * max(1.0, eig.max()):
        return MetricReport("kl_static", math.inf, 0.0, n_eval,
                            extra={"diagnostic": "pushed samples have (near) singular covariance"})
    try:
        kde = gaussian_kde(pushed.T)
        log_p = kde.logpdf(x.T)
    except np.linalg.LinAlgError as e:
        return MetricReport("kl_static", math.inf, 0.0, n_eval,
                            extra={"diagnostic": f"KDE failed: {str(e).split('.')[0]}"})
    vals = gmm_log_density(q1, x) - log_p
    if not np.all(np.isfinite(vals)):
        return MetricReport("kl_static", math.inf, 0.0, n_eval,
                            extra={"diagnostic": "KDE density is zero at some q1 samples"})
    return MetricReport.from_samples("kl_static", vals)


def consistency(model, m_values, n: int, rng: np.random.Generator, q0: Sampler,
                ref_opts: IntegrateOpts = REFERENCE_OPTS) -> list[MetricReport]:
    """``(1/d) E||x^(m) - x^(*)||^2`` per NFE budget ``m``.

    ``x^(m)`` uses the midpoint rule with ``m`` evaluations and ``x^(*)`` the
    adaptive solver at tight tolerance, both from the same ``x0``. The feature
    map is the identity on coordinates.
    """
    f = _as_field(model)
    x0 = q0(rng, n)
    ref = integrate(f, x0, ref_opts).final
    d = x0.shape[1]
    out = []
    for m in m_values:
        xm = integrate(f, x0, IntegrateOpts("midpoint", nfe=int(m))).final
        diff = xm - ref
        out.append(MetricReport.from_samples(f"consistency_m{int(m)}",
                                             np.einsum("ij,ij->i", diff, diff) / d))
    return out


def write_reports(path, reports, config_hash: str | None = None, append: bool = True) -> None:
    """One JSON object per line: name, value, stderr, n, config hash and wall time."""
    with open(Path(path), "a" if append else "w") as fh:
        for r in reports:
            d = r.to_dict()
            if config_hash is not None:
                d["config_hash"] = config_hash
            d["wall_time"] = time.time()
            fh.write(json.dumps(d, sort_keys=True) + "\n")
