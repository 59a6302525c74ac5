"""Dense tensors with reverse-mode automatic differentiation.

Deliberately minimal: only the primitives the enhancement/VAD models need
(element-wise arithmetic, matmul, reductions, reshaping, concatenation,
slicing, sigmoid/tanh).  Fused layer ops (convolutions, GRU, batch norm)
live in :mod:`vsanet.layers` and plug into the same tape via ``Tensor``'s
``_parents``/``_backward`` hooks.

A tensor records its parents only while gradients are enabled and some
parent requires them, so inference builds no graph inside :func:`no_grad`.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from .errors import NumericalError

_GRAD_ENABLED = True
# Opt-in per-op finiteness checks; cheap paths keep this off and rely on the
# loss/output checks the training and enhancement code performs.
CHECK_FINITE = os.environ.get("VSANET_CHECK_FINITE", "") not in ("", "0")


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], backward_fn):
        if CHECK_FINITE and not np.all(np.isfinite(data)):
            raise NumericalError("non-finite values produced by an op")
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_fn = backward_fn
        return out

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        """Reverse-mode accumulation from a scalar root."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar tensor")
        if not self.requires_grad:
            raise ValueError("backward on a tensor that requires no grad")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- basics --------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- element-wise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape).astype(a.data.dtype, copy=False))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape).astype(b.data.dtype, copy=False))

    return Tensor._result(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape).astype(a.data.dtype, copy=False))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.data.shape).astype(b.data.dtype, copy=False))

    return Tensor._result(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape).astype(a.data.dtype, copy=False))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape).astype(b.data.dtype, copy=False))

    return Tensor._result(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.data.shape).astype(a.data.dtype, copy=False))
        if b.requires_grad:
            gb = -g * a.data / (b.data**2)
            b._accum(_unbroadcast(gb, b.data.shape).astype(b.data.dtype, copy=False))

    return Tensor._result(data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    data = a.data**p

    def backward(g):
        if a.requires_grad:
            a._accum((g * p * a.data ** (p - 1.0)).astype(a.data.dtype, copy=False))

    return Tensor._result(data, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum((g * np.sign(a.data)).astype(a.data.dtype, copy=False))

    return Tensor._result(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum((g / a.data).astype(a.data.dtype, copy=False))

    return Tensor._result(data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum((g * data).astype(a.data.dtype, copy=False))

    return Tensor._result(data, (a,), backward)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip values; gradient passes through the interior, is zero outside."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)

    def backward(g):
        if a.requires_grad:
            inside = (a.data >= lo) & (a.data <= hi)
            a._accum((g * inside).astype(a.data.dtype, copy=False))

    return Tensor._result(data, (a,), backward)


def sigmoid(a) -> Tensor:
    """Numerically stable logistic, output kept strictly inside (0, 1)."""
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    tiny = np.finfo(x.dtype).tiny
    upper = np.nextafter(x.dtype.type(1.0), x.dtype.type(0.0))
    data = np.clip(out, tiny, upper)

    def backward(g):
        if a.requires_grad:
            a._accum((g * data * (1.0 - data)).astype(a.data.dtype, copy=False))

    return Tensor._result(data, (a,), backward)


def tanh(a) -> Tensor:
    """tanh with output kept strictly inside (-1, 1) at float resolution."""
    a = as_tensor(a)
    out = np.tanh(a.data)
    upper = np.nextafter(a.data.dtype.type(1.0), a.data.dtype.type(0.0))
    data = np.clip(out, -upper, upper)

    def backward(g):
        if a.requires_grad:
            a._accum((g * (1.0 - data**2)).astype(a.data.dtype, copy=False))

    return Tensor._result(data, (a,), backward)


# -- reductions ----------------------------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accum(np.broadcast_to(gg, a.data.shape).astype(a.data.dtype, copy=False))

    return Tensor._result(data, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / float(n))


def max_(a, axis: int, keepdims=False) -> Tensor:
    """Max along one axis; gradient routes to the first maximal element."""
    a = as_tensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)
    idx = np.argmax(a.data, axis=axis)

    def backward(g):
        if a.requires_grad:
            gg = np.asarray(g)
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            out = np.zeros_like(a.data)
            np.put_along_axis(out, np.expand_dims(idx, axis), gg, axis=axis)
            a._accum(out)

    return Tensor._result(data, (a,), backward)


# -- movement ------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accum(g.reshape(a.data.shape))

    return Tensor._result(data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            a._accum(np.transpose(g, inv))

    return Tensor._result(data, (a,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        for t, part in zip(tensors, parts):
            if t.requires_grad:
                t._accum(part)

    return Tensor._result(data, tuple(tensors), backward)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    data = a.data[index]

    def backward(g):
        if a.requires_grad:
            out = np.zeros_like(a.data)
            np.add.at(out, index, g)
            a._accum(out)

    return Tensor._result(data, (a,), backward)


# -- linear algebra --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """np.matmul semantics: 2-D or batched stacks of matrices."""
    a, b = as_tensor(a), as_tensor(b)
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_unbroadcast(ga, a.data.shape).astype(a.data.dtype, copy=False))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.data.shape).astype(b.data.dtype, copy=False))

    return Tensor._result(data, (a, b), backward)
