"""Dense float64 tensors with reverse-mode automatic differentiation.

A small eager engine: each operation returns a new :class:`Tensor` holding a
numpy array plus, while gradients are enabled, a closure mapping the upstream
gradient to gradients for its parents. :func:`backward` walks the recorded
graph from a scalar root and accumulates into ``grad`` on every requires-grad
leaf. Built for desk-scale models where gradient checkability matters more
than speed; everything stays float64.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericError, ShapeMismatchError

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "backward",
    "matmul",
    "relu",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "tsum",
    "tmean",
    "reduce_min",
    "max_pool_points",
    "softmax",
    "top_k_softmax",
    "concat",
    "stack",
    "reshape",
    "transpose",
    "linear",
    "layer_norm",
]

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure value computation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A row-major float64 array with an optional gradient slot.

    ``grad`` stays ``None`` until a backward pass reaches this tensor (leaves
    only; repeated passes accumulate). Tensors are immutable after creation
    except for grad accumulation and optimizer updates to leaf ``data``.
    """

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # 0-d is always contiguous, shape preserved
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return _add(self, as_tensor(other))

    def __radd__(self, other):
        return _add(as_tensor(other), self)

    def __sub__(self, other):
        return _sub(self, as_tensor(other))

    def __rsub__(self, other):
        return _sub(as_tensor(other), self)

    def __mul__(self, other):
        return _mul(self, as_tensor(other))

    def __rmul__(self, other):
        return _mul(as_tensor(other), self)

    def __truediv__(self, other):
        return _div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return _div(as_tensor(other), self)

    def __neg__(self):
        return _neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __pow__(self, exponent):
        return _pow(self, float(exponent))

    def __getitem__(self, key):
        return _getitem(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out axes numpy broadcasting added so g matches the parent shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def _sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def _mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def _div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "div")
    ad, bd = a.data, b.data
    return _make(
        ad / bd,
        (a, b),
        lambda g: (_unbroadcast(g / bd, a.shape), _unbroadcast(-g * ad / (bd * bd), b.shape)),
    )


def _neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def _pow(a: Tensor, c: float) -> Tensor:
    ad = a.data
    return _make(ad**c, (a,), lambda g: (g * c * ad ** (c - 1.0),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; gradient flows to both operands."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log: non-positive input")
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericError("sqrt: negative input")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(out, (a,), back)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reduce_min(a: Tensor, axis: int) -> Tensor:
    """Min along an axis; gradient routed to the argmin (lowest index on ties)."""
    idx = np.argmin(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    shape = a.shape

    def back(g):
        z = np.zeros(shape)
        np.put_along_axis(z, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (z,)

    return _make(out, (a,), back)


def max_pool_points(a: Tensor) -> Tensor:
    """Per-feature max over the point axis of an (n_points, d) tensor.

    Gradient is routed to the argmax point per feature, lowest index on ties.
    """
    if a.ndim != 2:
        raise ShapeMismatchError(f"max_pool_points: expected (n_points, d), got {a.shape}")
    idx = np.argmax(a.data, axis=0)
    out = a.data[idx, np.arange(a.shape[1])]
    shape = a.shape

    def back(g):
        z = np.zeros(shape)
        z[idx, np.arange(shape[1])] = g
        return (z,)

    return _make(out, (a,), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along an axis; rows sum to 1."""
    if np.isnan(a.data).any():
        raise NumericError("softmax: NaN in input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _make(y, (a,), back)


def top_k_softmax(a: Tensor, k: int, axis: int = -1) -> Tensor:
    """Softmax over the k largest entries per slice; all others exactly 0.

    Ties are broken toward the lowest index. ``k >= slice length`` degenerates
    to a plain softmax. Masked positions carry zero gradient.
    """
    if k < 1:
        raise ValueError(f"top_k_softmax: k must be >= 1, got {k}")
    if np.isnan(a.data).any():
        raise NumericError("top_k_softmax: NaN in input")
    xm = np.moveaxis(a.data, axis, -1)
    n = xm.shape[-1]
    kk = min(k, n)
    order = np.argsort(-xm, axis=-1, kind="stable")
    mask = np.zeros(xm.shape, dtype=bool)
    np.put_along_axis(mask, order[..., :kk], True, axis=-1)
    shift = np.max(np.where(mask, xm, -np.inf), axis=-1, keepdims=True)
    e = np.where(mask, np.exp(xm - shift), 0.0)
    ym = e / e.sum(axis=-1, keepdims=True)
    y = np.ascontiguousarray(np.moveaxis(ym, -1, axis))

    def back(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _make(y, (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an axis; gradient splits back to each input."""
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as err:
        raise ShapeMismatchError(f"concat: {[t.shape for t in ts]} along axis {axis}") from err
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tuple(ts), back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equal-shape tensors along a new axis."""
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as err:
        raise ShapeMismatchError(f"stack: {[t.shape for t in ts]}") from err

    def back(g):
        return tuple(np.moveaxis(g, axis, 0)[i] for i in range(len(ts)))

    return _make(out, tuple(ts), back)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatchError(f"transpose: expected 2-D, got {a.shape}")
    return _make(a.data.T, (a,), lambda g: (g.T,))


def _getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]
    shape = a.shape

    def back(g):
        z = np.zeros(shape)
        np.add.at(z, key, g)
        return (z,)

    return _make(np.array(out), (a,), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias broadcast over rows)."""
    out = matmul(x, weight)
    return out + bias if bias is not None else out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift.

    eps keeps the zero-variance (constant row) case finite: output is zero
    before gain/bias.
    """
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeMismatchError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(centered * centered, axis=-1, keepdims=True)
    inv = sqrt(var + eps)
    return (centered / inv) * gain + bias


def backward(root: Tensor) -> None:
    """Reverse-mode pass from a scalar root; accumulates leaf gradients."""
    if root.data.size != 1:
        raise ContractError(f"backward: root must be scalar, shape {root.shape}")
    if not root.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
