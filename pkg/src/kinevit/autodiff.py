"""Reverse-mode differentiation over dense float64 arrays.

A ``Tensor`` wraps a C-contiguous float64 ndarray.  Operations executed
inside a ``with Tape():`` block append (output, inputs, adjoint) records;
``Tape.grad`` replays the records in exact reverse order to accumulate
gradients.  Outside a tape the same operations run as plain forward numpy.

Two-dimensional tensors are the primary contract (row-major matrices);
most operations also accept extra leading batch axes so a whole minibatch
goes through numpy in one call.  Every operation validates operand shapes
before computing.  Tapes are thread-local: independent tapes may run on
distinct threads, a single tape is single-threaded.
"""
from __future__ import annotations

import threading

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape():
    """The innermost open Tape on this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive operations and their adjoint rules.

    ``grad`` walks the records back-to-front, so adjoints are replayed in
    exact reverse order of recording.  A parameter never touched by the
    recorded computation gets an exact zero gradient.
    """

    def __init__(self):
        self._records: list[tuple] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted")
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: "Tensor", inputs: tuple, backward) -> None:
        self._records.append((out, inputs, backward))

    def grad(self, output: "Tensor", params: list["Tensor"]) -> list[np.ndarray]:
        """Gradients of a scalar output w.r.t. each tensor in params."""
        if output.data.size != 1:
            raise ValueError(f"grad needs a scalar output, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for out, inputs, backward in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            for tensor, contrib in zip(inputs, backward(g)):
                if contrib is None:
                    continue
                acc = grads.get(id(tensor))
                grads[id(tensor)] = contrib if acc is None else acc + contrib
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


class Tensor:
    """Dense float64 array with optional tape-recorded history."""

    __slots__ = ("data",)

    def __init__(self, data, check: bool = True):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if check and not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor entries must be finite")
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return transpose(self, axes)

    @property
    def mT(self) -> "Tensor":
        """Swap the last two axes."""
        if self.ndim < 2:
            raise ValueError(f"mT needs ndim >= 2, got shape {self.shape}")
        axes = tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2)
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), check=False)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), check=False)


def eye(n: int) -> Tensor:
    return Tensor(np.eye(n), check=False)


def _record(out: Tensor, inputs: tuple, backward) -> Tensor:
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data, check=False)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data, check=False)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, check=False)

    def backward(g):
        return (-g,)

    return _record(out, (a,), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data, check=False)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = Tensor(a.data / b.data, check=False)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), backward)


# ---------------------------------------------------------------------------
# matrix product


def matmul(a, b) -> Tensor:
    """Matrix product with numpy stacking rules on leading axes.

    Adjoints: dA = dC @ B^T, dB = A^T @ dC, reduced over broadcast axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ValueError(f"matmul batch axes do not broadcast: {a.shape} @ {b.shape}") from None
    out = Tensor(np.matmul(a.data, b.data), check=False)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), check=False)

    def backward(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"transpose axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(np.transpose(a.data, axes)), check=False)

    def backward(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return _record(out, (a,), backward)


def _validate_index(idx) -> None:
    items = idx if isinstance(idx, tuple) else (idx,)
    for it in items:
        if not (isinstance(it, (int, np.integer, slice)) or it is Ellipsis):
            raise TypeError(f"only basic indexing is supported, got {type(it).__name__}")


def take(a, idx) -> Tensor:
    """Basic indexing (ints, slices, Ellipsis); adjoint scatters into zeros."""
    a = as_tensor(a)
    _validate_index(idx)
    picked = a.data[idx]
    out = Tensor(np.ascontiguousarray(picked), check=False)

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g.reshape(picked.shape)
        return (full,)

    return _record(out, (a,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), check=False)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), backward)


def stack(tensors, axis: int) -> Tensor:
    """Stack along a new axis (concat of unsqueezed operands)."""
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else axis + t.ndim + 1, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# reductions


def _reduced_shape(shape, axis, keepdims):
    if axis is None:
        axes = tuple(range(len(shape)))
    elif isinstance(axis, int):
        axes = (axis % len(shape),)
    else:
        axes = tuple(ax % len(shape) for ax in axis)
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    return axes, kept


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes, kept = _reduced_shape(a.shape, axis, keepdims)
    out = Tensor(a.data.sum(axis=axes, keepdims=keepdims), check=False)

    def backward(g):
        return (np.broadcast_to(g.reshape(kept), a.shape).copy(),)

    return _record(out, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes, kept = _reduced_shape(a.shape, axis, keepdims)
    count = float(np.prod([a.shape[i] for i in axes])) if axes else 1.0
    out = Tensor(a.data.mean(axis=axes, keepdims=keepdims), check=False)

    def backward(g):
        return (np.broadcast_to(g.reshape(kept) / count, a.shape).copy(),)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data), check=False)

    def backward(g):
        return (g * out.data,)

    return _record(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), check=False)

    def backward(g):
        return (g / a.data,)

    return _record(out, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data), check=False)

    def backward(g):
        return (g * 0.5 / out.data,)

    return _record(out, (a,), backward)


def sin(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sin(a.data), check=False)

    def backward(g):
        return (g * np.cos(a.data),)

    return _record(out, (a,), backward)


def cos(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.cos(a.data), check=False)

    def backward(g):
        return (-g * np.sin(a.data),)

    return _record(out, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data), check=False)

    def backward(g):
        return (g * (1.0 - out.data * out.data),)

    return _record(out, (a,), backward)


def gelu(a) -> Tensor:
    """Exact Gaussian error linear unit, 0.5 x (1 + erf(x / sqrt(2)))."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))
    out = Tensor(a.data * cdf, check=False)

    def backward(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        return (g * (cdf + a.data * pdf),)

    return _record(out, (a,), backward)


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select a where mask else b; mask is a constant boolean array."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, a.data, b.data), check=False)

    def backward(g):
        ga = _unbroadcast(np.where(mask, g, 0.0), a.shape)
        gb = _unbroadcast(np.where(mask, 0.0, g), b.shape)
        return ga, gb

    return _record(out, (a, b), backward)


# ---------------------------------------------------------------------------
# normalizers


def softmax_rows(a, temperature: float = 1.0) -> Tensor:
    """Softmax over the last axis with temperature scaling.

    For a 2-D matrix this normalizes each row: max-subtracted exponentials
    divided by the row sum, so every output row sums to one.
    """
    a = as_tensor(a)
    if a.ndim < 1:
        raise ValueError("softmax_rows needs at least one axis")
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = a.data / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = Tensor(e / e.sum(axis=-1, keepdims=True), check=False)

    def backward(g):
        s = out.data
        inner = (g * s).sum(axis=-1, keepdims=True)
        return ((g - inner) * s / temperature,)

    return _record(out, (a,), backward)


def logsumexp(a, axis: int) -> Tensor:
    """Stable log-sum-exp over one axis, keepdims always on."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    out = Tensor(m + np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True)), check=False)

    def backward(g):
        return (g * np.exp(a.data - out.data),)

    return _record(out, (a,), backward)
