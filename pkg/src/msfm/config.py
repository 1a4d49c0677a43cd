"""Experiment configuration: a YAML document mapped onto nested dataclasses.

Unknown keys anywhere in the document are errors. A resolved configuration
hashes to a short hex digest that names its output directory, so runs from
different configurations never share files.

Schema (defaults in brackets)::

    name: str                          [run]
    seed: int                          [0]
    out: str                           [runs]
    q0 / q1:                           source / target distribution
      kind: normal | checkerboard | gmm | csv
      dim: int                         [2]   (normal, gmm)
      half_width: float                [2.0] (checkerboard)
      centers: int, spread: float, std: float, seed: int   (gmm, random means)
      means: [[...]], weights: [...]   (gmm, explicit; overrides centers/spread)
      path: str                        (csv)
    coupler:
      kind: uniform | batchot | batcheot | stable | heuristic   [uniform]
      epsilon: float | null            [null -> epsilon_scale * mean(C)]
      epsilon_scale: float             [0.1]
    cost:
      kind: sqeuclidean | l1 | cosine | weighted_sq   [sqeuclidean]
      matrix: str | null               (CSV file holding A)
      matrix_seed: int                 [0] (random A when no file is given)
    k: int | null                      coupling block size [train.batch_size]
    train:
      batch_size [128], steps [null], epochs [null], dataset_size [50000],
      lr [0.001], lr_candidates [[0.005, 0.001, 0.0005]],
      beta1 [0.9], beta2 [0.999], eps [1e-8], weight_decay [0.0],
      checkpoint_every [0]
    net:
      hidden: [int] | null             [null -> widths from budget]
      n_hidden [3], budget [null -> 50000 for d <= 2, else 800000],
      time_embedding [null -> concat for d <= 2, else sinusoidal], n_freq [8]
    eval:
      metrics: [str]                   [[]]  any of straightness, transport_cost,
                                       kl, consistency, variance_proxy
      n [2000], nfe_grid [[]], m_values [[4, 6, 8, 12]], batches [20],
      atol [1e-5], rtol [1e-5]
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

DIST_KINDS = ("normal", "checkerboard", "gmm", "csv")
EVAL_METRICS = ("straightness", "transport_cost", "kl", "consistency", "variance_proxy")


@dataclass
class DistConfig:
    kind: str = "normal"
    dim: int = 2
    half_width: float = 2.0
    centers: int = 1
    spread: float = 1.0
    std: float = 1.0
    seed: int = 0
    means: list | None = None
    weights: list | None = None
    path: str | None = None

    def validate(self):
        if self.kind not in DIST_KINDS:
            raise ConfigError(f"unknown distribution kind {self.kind!r}; expected one of {DIST_KINDS}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("csv distribution needs a path")
        if self.dim < 1 or self.centers < 1 or not self.std > 0:
            raise ConfigError("distribution needs dim >= 1, centers >= 1 and std > 0")


@dataclass
class CouplerConfig:
    kind: str = "uniform"
    epsilon: float | None = None
    epsilon_scale: float = 0.1


@dataclass
class CostConfig:
    kind: str = "sqeuclidean"
    matrix: str | None = None
    matrix_seed: int = 0


@dataclass
class TrainConfig:
    batch_size: int = 128
    steps: int | None = None
    epochs: float | None = None
    dataset_size: int = 50_000
    lr: float = 1e-3
    lr_candidates: list = field(default_factory=lambda: [0.005, 0.001, 0.0005])
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    checkpoint_every: int = 0

    @property
    def n_steps(self) -> int:
        """``steps`` if set, else ``ceil(epochs * dataset_size / batch_size)``."""
        if self.steps is not None:
            return int(self.steps)
        if self.epochs is not None:
            return int(math.ceil(self.epochs * self.dataset_size / self.batch_size))
        return 0

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps is not None and self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")


@dataclass
class NetConfig:
    hidden: list | None = None
    n_hidden: int = 3
    budget: int | None = None
    time_embedding: str | None = None
    n_freq: int = 8


@dataclass
class EvalConfig:
    metrics: list = field(default_factory=list)
    n: int = 2000
    nfe_grid: list = field(default_factory=list)
    m_values: list = field(default_factory=lambda: [4, 6, 8, 12])
    batches: int = 20
    atol: float = 1e-5
    rtol: float = 1e-5

    def validate(self):
        bad = [m for m in self.metrics if m not in EVAL_METRICS]
        if bad:
            raise ConfigError(f"unknown metrics {bad}; expected a subset of {EVAL_METRICS}")


@dataclass
class ExperimentConfig:
    name: str = "run"
    seed: int = 0
    out: str = "runs"
    q0: DistConfig = field(default_factory=DistConfig)
    q1: DistConfig = field(default_factory=lambda: DistConfig(kind="checkerboard"))
    coupler: CouplerConfig = field(default_factory=CouplerConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    k: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    net: NetConfig = field(default_factory=NetConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def coupling_k(self) -> int:
        return self.train.batch_size if self.k is None else int(self.k)

    @property
    def dim(self) -> int:
        return 2 if self.q1.kind == "checkerboard" else self.q1.dim

    def validate(self) -> "ExperimentConfig":
        self.q0.validate()
        self.q1.validate()
        self.train.validate()
        self.eval.validate()
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Digest of everything that affects results (``out`` excluded)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.out) / f"{self.name}-{self.hash()}"


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        sub = hints[key]
        path = f"{where}.{key}" if where else key
        if dataclasses.is_dataclass(sub):
            kwargs[key] = _build(sub, value, path)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from e
    return config_from_dict(data or {})


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
