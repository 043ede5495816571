"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is deliberately small: rank-0/1/2 arrays and only the operations
the allocation models need. While a :class:`Tape` is active, every op that
touches a differentiable tensor appends one node; :func:`backward` replays
the tape once in reverse and accumulates gradients into ``Tensor.grad``.
Tapes are thread-local, so a tape and its tensors belong to one thread for
the duration of a forward/backward pass.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

Array = np.ndarray


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """An operation was invoked outside its documented contract."""


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = _LOCAL.tapes = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array plus a gradient slot of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars go through shift/scale so they stay off the tape
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    def __radd__(self, other):
        return shift(self, float(other))

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None):
        return reduce_sum(self, axis)

    def mean(self, axis: int | None = None):
        return mean(self, axis)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return absolute(self)

    def sin(self):
        return sin(self)

    def tanh(self):
        return tanh(self)

    def reshape(self, shape):
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("inputs", "out", "back")

    def __init__(self, inputs: tuple[Tensor, ...], out: Tensor, back: Callable):
        self.inputs = inputs
        self.out = out
        self.back = back


class Tape:
    """Ordered record of the operations of one forward pass.

    Nodes are appended in execution order, so every node's inputs precede
    it and a single reverse sweep visits each node exactly once.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()


class no_grad:
    """Context that suspends recording (validation / inference passes)."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()


def _emit(inputs: tuple[Tensor, ...], out_data: Array, back: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(inputs, out, back))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every differentiable tensor reachable from ``loss``.

    Gradients accumulate across fan-out: a tensor consumed by several later
    nodes receives the sum of all path gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.out.grad
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.back(g)):
            if gi is None or not t.requires_grad:
                continue
            t.grad = gi if t.grad is None else t.grad + gi


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return g @ bd.T, ad.T @ g

    return _emit((a, b), ad @ bd, back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return _emit((a, b), a.data + b.data, lambda g: (g, g))
    # row-wise bias: (m, n) + (n,)
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        return _emit((a, b), a.data + b.data[None, :], lambda g: (g, g.sum(axis=0)))
    raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} - {b.shape}")
    return _emit((a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} * {b.shape}")
    ad, bd = a.data, b.data
    return _emit((a, b), ad * bd, lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"div: incompatible shapes {a.shape} / {b.shape}")
    ad, bd = a.data, b.data
    return _emit((a, b), ad / bd, lambda g: (g / bd, -g * ad / (bd * bd)))


def shift(x: Tensor, c: float) -> Tensor:
    return _emit((x,), x.data + c, lambda g: (g,))


def scale(x: Tensor, c: float) -> Tensor:
    return _emit((x,), x.data * c, lambda g: (g * c,))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty input list")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit(tuple(parts), np.concatenate([p.data for p in parts], axis=axis), back)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    xd = x.data
    if axis is None:
        return _emit((x,), np.sum(xd), lambda g: (np.full_like(xd, float(g)),))

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), xd.shape).copy(),)

    return _emit((x,), np.sum(xd, axis=axis), back)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    xd = x.data
    if axis is None:
        n = xd.size
        return _emit((x,), np.mean(xd), lambda g: (np.full_like(xd, float(g) / n),))
    n = xd.shape[axis]

    def back(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), xd.shape).copy(),)

    return _emit((x,), np.mean(xd, axis=axis), back)


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return _emit((x,), y, lambda g: (g * (0.5 / y),))


def absolute(x: Tensor) -> Tensor:
    xd = x.data
    return _emit((x,), np.abs(xd), lambda g: (g * np.sign(xd),))


def sin(x: Tensor) -> Tensor:
    xd = x.data
    return _emit((x,), np.sin(xd), lambda g: (g * np.cos(xd),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit((x,), y, lambda g: (g * (1.0 - y * y),))


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected rank-2 tensor, got shape {x.shape}")
    return _emit((x,), x.data.T.copy(), lambda g: (g.T,))


def slice_(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.shape[axis]):
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    key = tuple(slice(start, stop) if d == axis else slice(None) for d in range(x.data.ndim))

    def back(g):
        full = np.zeros_like(x.data)
        full[key] = g
        return (full,)

    return _emit((x,), x.data[key].copy(), back)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _emit((x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _emit((x,), y, back)


def elu(x: Tensor) -> Tensor:
    xd = x.data
    y = np.where(xd > 0, xd, np.expm1(np.minimum(xd, 0.0)))
    return _emit((x,), y, lambda g: (g * np.where(xd > 0, 1.0, y + 1.0),))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _emit((x,), y, lambda g: (g * y * (1.0 - y),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply affine.

    Population variance; ``gain`` and ``bias`` must be 1-D of the last-axis
    length.
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} do not match last axis of {x.shape}")
    xd, gd = x.data, gain.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
        )
        lead = tuple(range(xd.ndim - 1))
        dgain = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbias = g.sum(axis=lead) if lead else g.copy()
        return dx, dgain, dbias

    return _emit((x, gain, bias), xhat * gd + bias.data, back)


def sign_const(x: Tensor) -> Tensor:
    """Elementwise sign with sign(0) = +1, treated as a constant in backward.

    The result never carries a gradient: sign is piecewise constant, so its
    derivative is zero almost everywhere.
    """
    return Tensor(np.where(x.data >= 0, 1.0, -1.0))
