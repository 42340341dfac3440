"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray of float32 (training) or float64 (shadow
evaluation for oracles and gradient checks); the dtype of a graph is
inherited from its leaves. Each differentiable op records a closure that
scatters the upstream gradient into its parents; ``Tensor.backward`` runs
them in reverse topological order.

Integer index arrays (ids, gather indices) are plain numpy arrays, never
Tensors.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from ..errors import NumericError, ShapeError

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _bwd=None):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def _accum(self, g: np.ndarray) -> None:
        # First write copies: upstream may hand the same buffer to siblings.
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar loss, accumulating ``.grad`` on leaves."""
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        if not np.isfinite(self.data).all():
            raise NumericError("backward called on a non-finite loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_coerce(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or isinstance(shape[0], int) else shape[0])

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], bwd) -> Tensor:
    rg_parents = tuple(p for p in parents if p.requires_grad)
    if rg_parents:
        return Tensor(data, requires_grad=True, _parents=rg_parents, _bwd=bwd)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise arithmetic ----------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _result(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _result(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _result(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        a._accum(-g)

    return _result(-a.data, (a,), bwd)


def pow_const(a: Tensor, p: float) -> Tensor:
    out = a.data**p

    def bwd(g):
        a._accum(g * p * a.data ** (p - 1.0))

    return _result(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        a._accum(g * out)

    return _result(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def bwd(g):
        a._accum(g / a.data)

    return _result(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        a._accum(g * (1.0 - out * out))

    return _result(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        a._accum(g * out * (1.0 - out))

    return _result(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        a._accum(g * (a.data > 0))

    return _result(out, (a,), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through the interior."""
    out = np.clip(a.data, lo, hi)

    def bwd(g):
        a._accum(g * ((a.data > lo) & (a.data < hi)))

    return _result(out, (a,), bwd)


# linear algebra and shape ops ----------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with broadcasting over leading batch dims (ndim >= 2)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(out, (a, b), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g):
        a._accum(g.reshape(a.shape))

    return _result(out, (a,), bwd)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = np.swapaxes(a.data, ax1, ax2)

    def bwd(g):
        a._accum(np.swapaxes(g, ax1, ax2))

    return _result(out, (a,), bwd)


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = np.broadcast_to(a.data, shape)

    def bwd(g):
        a._accum(_unbroadcast(g, a.shape))

    return _result(out.copy(), (a,), bwd)


def getitem(a: Tensor, key) -> Tensor:
    """Basic slicing/indexing (no fancy index arrays; see ``take0``)."""
    out = a.data[key]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        a._accum(full)

    return _result(out.copy() if out.base is not None else out, (a,), bwd)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = list(tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    return _result(out, ts, bwd)


def take0(a: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows along axis 0; the embedding-lookup primitive.

    ``ids`` may have any shape; output shape is ``ids.shape + a.shape[1:]``.
    """
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= a.shape[0]):
        raise ShapeError(
            f"take0 index out of range [0, {a.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out = np.take(a.data, ids, axis=0)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, ids.reshape(-1), g.reshape((-1,) + a.shape[1:]))
        a._accum(full)

    return _result(out, (a,), bwd)


def take_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one element per row along the last axis: ``out[i] = a[i, idx[i]]``."""
    if a.ndim != 2:
        raise ShapeError(f"take_last expects a 2-d tensor, got {a.shape}")
    idx = np.asarray(idx).reshape(-1, 1)
    out = np.take_along_axis(a.data, idx, axis=1).reshape(-1)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g.reshape(-1, 1), axis=1)
        a._accum(full)

    return _result(out, (a,), bwd)


# reductions -----------------------------------------------------------


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    axes = _axis_tuple(axis, a.ndim)

    def bwd(g):
        if not keepdims:
            shape = list(a.shape)
            for ax in axes:
                shape[ax] = 1
            g = g.reshape(shape)
        a._accum(np.broadcast_to(g, a.shape))

    return _result(out, (a,), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), Tensor(np.asarray(1.0 / count, dtype=a.dtype)))


# stable softmax family -------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Probability-simplex normalization with max-subtraction for stability."""
    if x.size == 0:
        raise ShapeError("softmax over an empty tensor")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax received non-finite activations")
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = exp(sub(x, shift))
    return div(e, reduce_sum(e, axis=axis, keepdims=True))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not np.isfinite(x.data).all():
        raise NumericError("log_softmax received non-finite activations")
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    xs = sub(x, shift)
    return sub(xs, log(reduce_sum(exp(xs), axis=axis, keepdims=True)))
