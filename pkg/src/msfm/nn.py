"""Fully connected vector-field networks, Adam, and checkpoints.

Parameters live in one flat float64 vector. Layer ``l`` owns a weight block
``W_l`` of shape ``(fan_in, fan_out)`` followed by a bias ``b_l``; the layer
computes ``h @ W_l + b_l``. Hidden layers apply Swish, the output layer is
linear.

The network input is ``x`` joined with time features:

* ``concat``: the scalar ``t`` appended as one extra column,
* ``sinusoidal``: ``sin(pi 2^j t)`` and ``cos(pi 2^j t)`` for ``j < n_freq``,
* ``none``: no time input (static maps ``x0 -> x1``).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat
from .errors import CheckpointError, ConfigError, NumericalError, ShapeError

TIME_EMBEDDINGS = ("concat", "sinusoidal", "none")
ACTIVATIONS = ("swish", "identity")
CHECKPOINT_MAGIC = "msfm-checkpoint 1"


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden: tuple = (64, 64)
    time_embedding: str = "concat"
    n_freq: int = 8
    activation: str = "swish"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if len(self.hidden) == 0:
            raise ConfigError("a network needs at least one hidden layer")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if self.time_embedding not in TIME_EMBEDDINGS:
            raise ConfigError(f"unknown time embedding {self.time_embedding!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.time_embedding == "sinusoidal" and self.n_freq < 1:
            raise ConfigError("sinusoidal embedding needs n_freq >= 1")

    @property
    def time_features(self) -> int:
        return {"concat": 1, "sinusoidal": 2 * self.n_freq, "none": 0}[self.time_embedding]

    @property
    def widths(self) -> list[int]:
        return [self.input_dim + self.time_features, *self.hidden, self.input_dim]

    def layout(self) -> list[tuple[int, tuple, int, int]]:
        """``(weight offset, weight shape, bias offset, bias size)`` per layer."""
        out, pos = [], 0
        w = self.widths
        for fan_in, fan_out in zip(w[:-1], w[1:]):
            out.append((pos, (fan_in, fan_out), pos + fan_in * fan_out, fan_out))
            pos += fan_in * fan_out + fan_out
        return out

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(**d)


def width_for_budget(input_dim: int, budget: int, n_hidden: int = 3,
                     time_features: int = 1) -> int:
    """Largest uniform hidden width whose parameter count stays within ``budget``.

    With ``n`` hidden layers of width ``h`` the count is
    ``(n-1) h^2 + (f_in + n + d) h + d`` where ``f_in = d + time_features``.
    """
    d, f_in = input_dim, input_dim + time_features
    a, b, c = n_hidden - 1, f_in + n_hidden + d, d - budget
    if a == 0:
        h = -c / b
    else:
        h = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
    h = max(1, int(h))
    while h > 1 and a * h * h + b * h + d > budget:
        h -= 1
    return h


def default_spec(d: int, budget: int | None = None, n_hidden: int = 3) -> NetSpec:
    """Time embedding by dimension (concat for d <= 2, sinusoidal above) and
    widths sized to the default parameter budget (50K for d <= 2, else 800K)."""
    emb = "concat" if d <= 2 else "sinusoidal"
    if budget is None:
        budget = 50_000 if d <= 2 else 800_000
    tf = 1 if emb == "concat" else 16
    h = width_for_budget(d, budget, n_hidden, tf)
    return NetSpec(d, (h,) * n_hidden, emb)


def time_features(spec: NetSpec, t, n: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    t = np.broadcast_to(t.reshape(-1, 1) if t.ndim else t, (n, 1))
    if spec.time_embedding == "concat":
        return np.array(t)
    if spec.time_embedding == "sinusoidal":
        w = math.pi * 2.0 ** np.arange(spec.n_freq)
        return np.concatenate([np.sin(t * w), np.cos(t * w)], axis=1)
    return np.zeros((n, 0))


def _swish(z):
    # z * sigmoid(z), written to avoid exp overflow
    return z * (0.5 * (1.0 + np.tanh(0.5 * z)))


class VectorFieldModel:
    """``v_t(x; theta)`` with flat parameters ``params``."""

    def __init__(self, spec: NetSpec, params=None):
        self.spec = spec
        if params is None:
            params = np.zeros(spec.n_params)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (spec.n_params,):
            raise ShapeError(f"expected {spec.n_params} parameters, got shape {params.shape}")
        self.params = params

    @property
    def dim(self) -> int:
        return self.spec.input_dim

    def layers(self, params=None):
        p = self.params if params is None else params
        return [(p[wo:wo + shape[0] * shape[1]].reshape(shape), p[bo:bo + bn])
                for wo, shape, bo, bn in self.spec.layout()]

    def _inputs(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise ShapeError(f"model expects dimension {self.dim}, got {x.shape[1]}")
        return x, time_features(self.spec, t, x.shape[0]), single

    def forward(self, x, t=0.0) -> np.ndarray:
        """Plain numpy evaluation for a point ``(d,)`` or a batch ``(n, d)``."""
        x, tf, single = self._inputs(x, t)
        h = np.concatenate([x, tf], axis=1) if tf.shape[1] else x
        layers = self.layers()
        for W, b in layers[:-1]:
            h = h @ W + b
            if self.spec.activation == "swish":
                h = _swish(h)
        W, b = layers[-1]
        out = h @ W + b
        if not np.all(np.isfinite(out)):
            raise NumericalError("network output contains NaN or inf")
        return out[0] if single else out

    __call__ = forward

    def forward_tensor(self, x, t, params=None) -> Tensor:
        """Differentiable evaluation. ``x`` may be a Tensor; ``params`` is a list
        of ``(W, b)`` Tensor pairs (defaults to constants from ``self.params``)."""
        xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        xd, tf, _ = self._inputs(xd, t)
        if not isinstance(x, Tensor):
            x = Tensor(xd)
        h = concat([x, Tensor(tf)], axis=1) if tf.shape[1] else x
        if params is None:
            params = [(Tensor(W), Tensor(b)) for W, b in self.layers()]
        for W, b in params[:-1]:
            h = h @ W + b
            if self.spec.activation == "swish":
                h = h.swish()
        W, b = params[-1]
        return h @ W + b

    def velocity_and_divergence(self, x, t):
        """``v(t, x)`` and its divergence ``sum_i dv_i/dx_i`` for a batch.

        The divergence takes one reverse pass per coordinate with a one-hot
        cotangent, so it is exact and costs ``d`` backward passes.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        X = Tensor(x, requires_grad=True)
        out = self.forward_tensor(X, t)
        if not np.all(np.isfinite(out.data)):
            raise NumericalError("network output contains NaN or inf")
        div = np.zeros(x.shape[0])
        for i in range(self.dim):
            cot = np.zeros_like(out.data)
            cot[:, i] = 1.0
            X.grad = None
            out.backward(cot)
            div += X.grad[:, i]
        return out.data, div

    def copy(self) -> "VectorFieldModel":
        return VectorFieldModel(self.spec, self.params.copy())


def init_model(spec: NetSpec, rng: np.random.Generator) -> VectorFieldModel:
    """Weights uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, biases zero."""
    params = np.zeros(spec.n_params)
    for wo, (fan_in, fan_out), _, _ in spec.layout():
        bound = 1.0 / math.sqrt(fan_in)
        params[wo:wo + fan_in * fan_out] = rng.uniform(-bound, bound, fan_in * fan_out)
    return VectorFieldModel(spec, params)


def loss_and_grad(model: VectorFieldModel, closure) -> tuple[float, np.ndarray]:
    """Evaluate ``closure(net)`` and its gradient with respect to ``model.params``.

    ``net(x, t)`` evaluates the model as a Tensor graph on parameter leaves;
    ``closure`` must return a scalar Tensor built from supported operations.
    """
    leaves = [(Tensor(W, requires_grad=True), Tensor(b, requires_grad=True))
              for W, b in model.layers(model.params.copy())]

    def net(x, t=0.0):
        return model.forward_tensor(x, t, leaves)

    loss = closure(net)
    if not isinstance(loss, Tensor):
        loss = Tensor(loss)
    if loss.data.size != 1:
        raise ShapeError("loss closure must return a scalar")
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericalError("loss is NaN or inf")
    grad = np.zeros(model.spec.n_params)
    if loss.requires_grad:
        loss.backward()
    for (W, b), (wo, shape, bo, bn) in zip(leaves, model.spec.layout()):
        if W.grad is not None:
            grad[wo:wo + shape[0] * shape[1]] = W.grad.ravel()
        if b.grad is not None:
            grad[bo:bo + bn] = b.grad
    return value, grad


# --- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    n_params: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n_params)
        if self.v is None:
            self.v = np.zeros(self.n_params)
        if self.m.shape != (self.n_params,) or self.v.shape != (self.n_params,):
            raise ShapeError("Adam moment vectors must match the parameter count")

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "weight_decay": self.weight_decay, "step": self.step}


def adam_step(model: VectorFieldModel, state: AdamState, grad) -> None:
    """Bias-corrected Adam update applied in place to ``model.params``.

    A nonzero ``weight_decay`` is added to the gradient as an L2 term.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.params.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match parameters {model.params.shape}")
    if state.weight_decay:
        grad = grad + state.weight_decay * model.params
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    model.params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# --- checkpoints --------------------------------------------------------------
#
# Line 1: the magic string. Line 2: a JSON header with the net spec, parameter
# count, seed, training step and (optionally) Adam hyperparameters. Then one
# section per vector: a line with its name followed by one float.hex() value
# per line. Hex floats make the round trip bit-exact.

def save_checkpoint(path, model: VectorFieldModel, state: AdamState | None = None,
                    seed: int | None = None, step: int = 0, extra: dict | None = None) -> None:
    header = {"spec": model.spec.to_dict(), "n_params": model.spec.n_params,
              "seed": seed, "step": step, "has_adam": state is not None}
    if state is not None:
        header["adam"] = state.hyper()
    if extra:
        header["extra"] = extra
    lines = [CHECKPOINT_MAGIC, json.dumps(header, sort_keys=True), "params"]
    lines += [float(v).hex() for v in model.params]
    if state is not None:
        for name, vec in (("m", state.m), ("v", state.v)):
            lines.append(name)
            lines += [float(v).hex() for v in vec]
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path, spec: NetSpec | None = None):
    """Returns ``(model, adam_state_or_None, header)``.

    If ``spec`` is given and differs from the stored one, raises ShapeError.
    """
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a version-1 checkpoint")
    try:
        header = json.loads(lines[1])
        stored = NetSpec.from_dict(header["spec"])
    except (IndexError, ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"bad checkpoint header: {e}") from e
    if spec is not None and spec != stored:
        raise ShapeError(f"checkpoint holds {stored}, expected {spec}")
    n = stored.n_params
    if header.get("n_params") != n:
        raise CheckpointError("parameter count in header does not match the network spec")

    def section(start, name):
        if start >= len(lines) or lines[start] != name:
            raise CheckpointError(f"missing section {name!r}")
        body = lines[start + 1:start + 1 + n]
        if len(body) != n:
            raise CheckpointError(f"section {name!r} is truncated")
        try:
            return np.array([float.fromhex(s) for s in body])
        except ValueError as e:
            raise CheckpointError(f"section {name!r}: {e}") from e

    model = VectorFieldModel(stored, section(2, "params"))
    state = None
    if header.get("has_adam"):
        hyper = header["adam"]
        state = AdamState(n, m=section(3 + n, "m"), v=section(4 + 2 * n, "v"), **hyper)
    return model, state, header
