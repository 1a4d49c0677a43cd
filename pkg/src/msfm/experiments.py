"""Training and evaluation loops shared by the CLI and the acceptance suite.

Random streams are derived from the config seed with :func:`~msfm.data.split`:
index 0 initializes the network, 1 feeds training batches, 2 drives
evaluation, 3 generates the weighted-cost matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import coupling, data, metrics, nn, ode
from .config import ExperimentConfig
from .cost import CostFn, cost_from_tag
from .errors import ConfigError, NumericalError
from .flow import barycentric_loss, jcfm_loss, make_train_samples, variance_proxy

STREAM_INIT, STREAM_TRAIN, STREAM_EVAL = 0, 1, 2


def build_distribution(spec, dim_hint: int | None = None):
    """``(sampler, analytic_gmm_or_None)`` for a :class:`~msfm.config.DistConfig`."""
    if spec.kind == "checkerboard":
        hw = spec.half_width
        return (lambda rng, n: data.sample_checkerboard(rng, n, hw)), None
    if spec.kind == "csv":
        return data.csv_sampler(data.load_batch(spec.path)), None
    if spec.kind == "normal":
        g = data.GMM.standard_normal(spec.dim)
    elif spec.means is not None:
        means = np.asarray(spec.means, dtype=np.float64)
        w = (np.full(len(means), 1.0 / len(means)) if spec.weights is None
             else np.asarray(spec.weights, dtype=np.float64))
        g = data.GMM(w, means, np.full(len(means), float(spec.std)))
    else:
        g = data.make_random_gmm(spec.dim, spec.centers, spec.spread, spec.std,
                                 data.make_rng(spec.seed))
    return g.sample, g


def build_cost(cfg: ExperimentConfig) -> CostFn:
    return cost_from_tag(cfg.cost.kind, cfg.cost.matrix, cfg.dim, cfg.cost.matrix_seed)


def build_coupler(cfg: ExperimentConfig) -> coupling.Coupler:
    c = cfg.coupler
    return coupling.Coupler(c.kind, build_cost(cfg), c.epsilon, c.epsilon_scale)


def build_spec(cfg: ExperimentConfig, static: bool = False) -> nn.NetSpec:
    d, n = cfg.dim, cfg.net
    emb = n.time_embedding or ("concat" if d <= 2 else "sinusoidal")
    if static:
        emb = "none"
    if n.hidden:
        return nn.NetSpec(d, tuple(n.hidden), emb, n.n_freq)
    budget = n.budget or (50_000 if d <= 2 else 800_000)
    tf = nn.NetSpec(d, (1,), emb, n.n_freq).time_features
    h = nn.width_for_budget(d, budget, n.n_hidden, tf)
    return nn.NetSpec(d, (h,) * n.n_hidden, emb, n.n_freq)


@dataclass
class TrainResult:
    model: nn.VectorFieldModel
    state: nn.AdamState
    losses: np.ndarray
    config: ExperimentConfig
    lr_losses: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        """Mean of the last 5% of recorded losses (at least one)."""
        if self.losses.size == 0:
            return math.nan
        tail = max(1, self.losses.size // 20)
        return float(self.losses[-tail:].mean())


def _train(cfg: ExperimentConfig, static: bool, on_step=None) -> TrainResult:
    cfg.validate()
    rng = data.make_rng(cfg.seed)
    spec = build_spec(cfg, static)
    model = nn.init_model(spec, data.split(rng, STREAM_INIT))
    t = cfg.train
    state = nn.AdamState(spec.n_params, t.lr, t.beta1, t.beta2, t.eps, t.weight_decay)
    q0, _ = build_distribution(cfg.q0)
    q1, _ = build_distribution(cfg.q1)
    coupler = build_coupler(cfg)
    if static and coupler.kind not in ("batchot", "batcheot"):
        raise ConfigError("a static map is trained on optimal-transport couplings (batchot or batcheot)")
    k = cfg.coupling_k
    stream = data.split(rng, STREAM_TRAIN)
    n_steps = t.n_steps
    losses = np.empty(n_steps)
    for step in range(n_steps):
        try:
            x0, x1 = coupling.sample_joint(coupler, q0, q1, k, t.batch_size, stream)
            if static:
                loss, grad = barycentric_loss(model, x0, x1)
            else:
                loss, grad = jcfm_loss(model, make_train_samples(x0, x1, stream))
        except NumericalError as e:
            raise NumericalError(f"{e} (config {cfg.hash()})", step=step) from e
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient (config {cfg.hash()})", step=step)
        nn.adam_step(model, state, grad)
        losses[step] = loss
        if on_step is not None:
            on_step(step, loss, model, state)
    return TrainResult(model, state, losses, cfg)


def train_flow(cfg: ExperimentConfig, on_step=None) -> TrainResult:
    """Joint-objective training of a time-conditioned vector field."""
    return _train(cfg, False, on_step)


def train_static(cfg: ExperimentConfig, on_step=None) -> TrainResult:
    """Barycentric regression of a time-free map ``x0 -> x1`` on coupled pairs."""
    return _train(cfg, True, on_step)


def sweep_lr(cfg: ExperimentConfig, static: bool = False) -> TrainResult:
    """Train once per ``train.lr_candidates``; keep the run with the lowest final loss."""
    best, table = None, {}
    for lr in cfg.train.lr_candidates:
        c = replace(cfg, train=replace(cfg.train, lr=float(lr)))
        res = _train(c, static, None)
        table[float(lr)] = res.final_loss
        if best is None or res.final_loss < best.final_loss:
            best = res
    best.lr_losses = table
    return best


def integrate_opts(cfg: ExperimentConfig) -> ode.IntegrateOpts:
    return ode.IntegrateOpts(atol=cfg.eval.atol, rtol=cfg.eval.rtol)


def evaluate(cfg: ExperimentConfig, model: nn.VectorFieldModel, out_dir=None,
             rng: np.random.Generator | None = None) -> list[metrics.MetricReport]:
    """Run ``cfg.eval.metrics`` and, if ``out_dir`` is given, write
    ``samples_nfe{m}.csv`` (Euler with ``m`` steps) for each ``m`` in the NFE grid."""
    e = cfg.eval
    rng = rng or data.split(data.make_rng(cfg.seed), STREAM_EVAL)
    q0, g0 = build_distribution(cfg.q0)
    q1, g1 = build_distribution(cfg.q1)
    opts = integrate_opts(cfg)
    reports = []
    for name in e.metrics:
        if name == "straightness":
            reports.append(metrics.straightness(model, q0, e.n, rng, opts))
        elif name == "transport_cost":
            reports.append(metrics.flow_transport_cost(model, q0, e.n, rng, opts))
        elif name == "kl":
            if g0 is None or g1 is None:
                raise ConfigError("kl needs analytic (normal or gmm) source and target")
            reports.append(metrics.kl_model(g1, model, g0, e.n, rng, opts))
        elif name == "consistency":
            reports.extend(metrics.consistency(model, e.m_values, e.n, rng, q0))
        elif name == "variance_proxy":
            reports.append(variance_proxy(model, build_coupler(cfg), q0, q1,
                                          cfg.coupling_k, e.batches, rng))
    if out_dir is not None and e.nfe_grid:
        x0 = q0(rng, e.n)
        for m in e.nfe_grid:
            x1 = ode.integrate(ode.model_field(model), x0, ode.IntegrateOpts("euler", nfe=int(m))).final
            data.save_batch(Path(out_dir) / f"samples_nfe{int(m)}.csv", x1,
                            header=f"config {cfg.hash()} euler nfe={int(m)}")
    h = cfg.hash()
    for r in reports:
        r.config_hash = h
    return reports


@dataclass
class SweepRow:
    k: int
    coupler: str
    mean_cost: float
    stderr: float
    flow_cost: float = math.nan
    flow_stderr: float = math.nan


def sweep_k(cfg: ExperimentConfig, k_list, resamples: int, couplers=("batchot",),
            train: bool = False, n_eval: int | None = None) -> list[SweepRow]:
    """Mean coupling cost per (coupler, k); with ``train`` also the transport
    cost of a flow trained with that coupler and block size."""
    if not k_list:
        raise ConfigError("k_list must not be empty")
    q0, _ = build_distribution(cfg.q0)
    q1, _ = build_distribution(cfg.q1)
    fn = build_cost(cfg)
    root = data.make_rng(cfg.seed)
    rows = []
    for kind in couplers:
        c = coupling.Coupler(kind, fn, cfg.coupler.epsilon, cfg.coupler.epsilon_scale)
        for ki, k in enumerate(k_list):
            # every coupler sees the same batches at a given k
            rng = data.split(root, 10 + ki)
            mean, se = coupling.mean_coupling_cost(c, q0, q1, int(k), resamples, rng, fn)
            row = SweepRow(int(k), kind, mean, se)
            if train:
                sub = replace(cfg, k=int(k), coupler=replace(cfg.coupler, kind=kind))
                res = train_flow(sub)
                rep = metrics.flow_transport_cost(res.model, q0, n_eval or cfg.eval.n,
                                                  data.split(rng, 1), integrate_opts(cfg), fn)
                row.flow_cost, row.flow_stderr = rep.value, rep.stderr
            rows.append(row)
    return rows


def write_loss_curve(path, losses) -> None:
    lines = ["# step,loss"] + [f"{i},{float(v)!r}" for i, v in enumerate(losses)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_sweep(path, rows) -> None:
    lines = ["# k,coupler,mean_cost,stderr,flow_cost,flow_stderr"]
    lines += [f"{r.k},{r.coupler},{r.mean_cost!r},{r.stderr!r},{r.flow_cost!r},{r.flow_stderr!r}"
              for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")
