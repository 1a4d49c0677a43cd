"""A small reverse-mode automatic differentiation engine over numpy arrays.

Only the operations needed by fully connected networks and squared-error
losses are supported. Anything else applied to a :class:`Tensor` (for example
a raw numpy ufunc) raises :class:`~msfm.errors.UnsupportedOpError` rather than
silently dropping the gradient.
"""
from __future__ import annotations

import numpy as np

from .errors import UnsupportedOpError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        # reached for ``ndarray <op> Tensor``; route the four arithmetic ops back to Tensor
        op = _BINARY.get(ufunc.__name__)
        if method == "__call__" and op is not None and len(inputs) == 2 and not kwargs:
            return op(Tensor._lift(inputs[0]), inputs[1])
        raise UnsupportedOpError(f"numpy {ufunc.__name__} is not differentiable here; use Tensor ops")

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedOpError(f"numpy {func.__name__} is not differentiable here; use Tensor ops")

    # -- graph construction --------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        if isinstance(x, Tensor):
            return x
        if isinstance(x, (int, float, np.ndarray, np.floating, np.integer)):
            return Tensor(x)
        raise UnsupportedOpError(f"cannot combine Tensor with {type(x).__name__}")

    def _child(self, data, parents, backward) -> "Tensor":
        req = any(p.requires_grad for p in parents)
        return Tensor(data, req, parents if req else (), backward if req else None)

    def __add__(self, other):
        other = Tensor._lift(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._child(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        return self._child(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return self._child(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = Tensor._lift(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise UnsupportedOpError("matmul is only supported between 2-D tensors")

        def backward(g):
            return g @ b.data.T, a.data.T @ g

        return self._child(a.data @ b.data, (a, b), backward)

    def __rmatmul__(self, other):
        return Tensor._lift(other) @ self

    def square(self):
        a = self
        return self._child(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))

    def __pow__(self, p):
        if p == 2:
            return self.square()
        raise UnsupportedOpError("only integer power 2 is supported")

    def sigmoid(self):
        s = _sigmoid(self.data)
        return self._child(s, (self,), lambda g: (g * s * (1.0 - s),))

    def swish(self):
        x = self.data
        s = _sigmoid(x)
        return self._child(x * s, (self,), lambda g: (g * (s + x * s * (1.0 - s)),))

    def sum(self, axis=None):
        a = self
        shape = a.shape

        def backward(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._child(a.data.sum(axis=axis), (a,), backward)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis) * (1.0 / n)

    @staticmethod
    def concat(parts, axis=-1):
        parts = [Tensor._lift(p) for p in parts]
        sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

        def backward(g):
            return tuple(np.split(g, sizes, axis=axis))

        data = np.concatenate([p.data for p in parts], axis=axis)
        return parts[0]._child(data, tuple(parts), backward)

    # -- differentiation -----------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it.

        ``grad`` is the cotangent for ``self``; it defaults to 1 for scalars.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar needs an explicit cotangent")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if p.requires_grad:
                    grads[id(p)] = pg if id(p) not in grads else grads[id(p)] + pg


_BINARY = {
    "add": Tensor.__add__,
    "subtract": Tensor.__sub__,
    "multiply": Tensor.__mul__,
    "matmul": Tensor.__matmul__,
}


def concat(parts, axis=-1) -> Tensor:
    return Tensor.concat(parts, axis)
