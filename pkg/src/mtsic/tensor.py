"""Dense tensor with tape-based reverse-mode autodiff.

Ops only record onto a tape while one is active (``with Tape() as tape``) and at
least one input requires grad. Outside a tape everything runs as plain numpy,
which is what inference and finite-difference evaluation use.
"""
from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "TapeError",
    "ShapeError",
    "NonFiniteError",
    "backward",
    "tensor",
    "parameter",
    "get_default_dtype",
    "set_default_dtype",
    "precision",
    "check_finite",
    "count_flops",
]


class TapeError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_DEFAULT_DTYPE = np.dtype(np.float64 if os.environ.get("MTSIC_FLOAT64") == "1" else np.float32)


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors and parameters are created with."""
    prev = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


# --------------------------------------------------------------------------- flops

_FLOP_COUNTERS: list[list[int]] = []


@contextlib.contextmanager
def count_flops():
    """Count multiply-accumulate FLOPs (2 per MAC) of matmul-like ops run inside."""
    box = [0]
    _FLOP_COUNTERS.append(box)
    try:
        yield box
    finally:
        _FLOP_COUNTERS.remove(box)


def add_flops(n: int) -> None:
    for box in _FLOP_COUNTERS:
        box[0] += int(n)


# --------------------------------------------------------------------------- tape


@dataclass
class _Node:
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    inputs: tuple["Tensor", ...]
    output: "Tensor"


@dataclass
class Tape:
    """Ordered record of differentiable ops; consumed by one backward pass."""

    nodes: list[_Node] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeError("cannot record onto a consumed tape")
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def record(self, backward, inputs, output) -> None:
        self.nodes.append(_Node(backward, inputs, output))

    def backward(self, loss: "Tensor") -> None:
        if self.consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise TapeError("loss does not require grad")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._tape is None:
                    if t.grad is None:
                        t.grad = np.array(gi, dtype=t.data.dtype, copy=True)
                    else:
                        t.grad += gi
                elif t._tape is self:
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
        self.nodes.clear()


_TAPES: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def backward(loss: "Tensor") -> None:
    """Run reverse mode from a scalar loss on the tape that recorded it."""
    if loss._tape is None:
        raise TapeError("loss is not attached to any tape")
    loss._tape.backward(loss)


# --------------------------------------------------------------------------- tensor


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data.data if isinstance(data, Tensor) else data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype.kind == "f" else get_default_dtype()
        self.data = np.array(arr, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._tape = None
        return t

    # -- introspection
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- arithmetic
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

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- shape / reductions
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype or get_default_dtype()), requires_grad=True)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else get_default_dtype()
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def make_op(out_data: np.ndarray, inputs: Iterable[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording ``backward_fn`` when a tape is listening."""
    inputs = tuple(inputs)
    out = Tensor._wrap(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.record(backward_fn, inputs, out)
    return out


def check_finite(t: Tensor, name: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        bad = int(np.size(t.data) - np.count_nonzero(np.isfinite(t.data)))
        raise NonFiniteError(f"{name}: {bad} non-finite value(s)")
    return t


# --------------------------------------------------------------------------- binary ops


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), bw)


def power(a: Tensor, p: float) -> Tensor:
    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return make_op(a.data**p, (a,), bw)


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast like ``np.matmul``."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    add_flops(2 * out.size * a.shape[-1])

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_op(out, (a, b), bw)


# --------------------------------------------------------------------------- unary ops


def _unary(x: Tensor, out: np.ndarray, dfn) -> Tensor:
    def bw(g):
        return (g * dfn(),)

    return make_op(out.astype(x.dtype, copy=False), (x,), bw)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _unary(x, out, lambda: out)


def log(x: Tensor) -> Tensor:
    return _unary(x, np.log(x.data), lambda: 1.0 / x.data)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _unary(x, out, lambda: 0.5 / out)


def safe_sqrt(x: Tensor) -> Tensor:
    """sqrt whose gradient is 0 (not inf) where the argument is exactly 0."""
    out = np.sqrt(np.maximum(x.data, 0))

    def d():
        with np.errstate(divide="ignore"):
            return np.where(out > 0, 0.5 / np.where(out > 0, out, 1), 0.0)

    return _unary(x, out, d)


def tabs(x: Tensor) -> Tensor:
    return _unary(x, np.abs(x.data), lambda: np.sign(x.data))


def relu(x: Tensor) -> Tensor:
    return _unary(x, np.maximum(x.data, 0), lambda: (x.data > 0).astype(x.dtype))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    return _unary(x, np.where(pos, x.data, slope * x.data), lambda: np.where(pos, 1.0, slope).astype(x.dtype))


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    out[~pos] = e / (1.0 + e)
    return _unary(x, out, lambda: out * (1 - out))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _unary(x, out, lambda: 1 - out * out)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    v2 = v * v
    t = np.tanh(_GELU_C * v * (1 + 0.044715 * v2))
    out = 0.5 * v * (1 + t)

    def d():
        return 0.5 * (1 + t) + 0.5 * v * (1 - t * t) * _GELU_C * (1 + 3 * 0.044715 * v2)

    return _unary(x, out, d)


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0, x.data)
    return _unary(x, out, lambda: np.exp(x.data - out))


def log_sigmoid(x: Tensor) -> Tensor:
    return -softplus(-x)


def arccos(x: Tensor, floor: float = 1e-12) -> Tensor:
    """arccos; the derivative's 1 - x^2 is floored so |x| = 1 stays finite."""
    out = np.arccos(x.data)
    return _unary(x, out, lambda: -1.0 / np.sqrt(np.maximum(1 - x.data**2, floor)))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _unary(x, np.clip(x.data, lo, hi), lambda: inside.astype(x.dtype))


# --------------------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return make_op(np.asarray(out), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axes, keepdims) * (1.0 / n)


def tmax(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max along one axis (or all); the gradient goes to the first argmax."""
    if axis is None:
        out = tmax(reshape(x, (-1,)), 0)
        return reshape(out, (1,) * x.ndim) if keepdims else out
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), gk, axis)
        return (gx,)

    return make_op(out, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (x,), bw)


def standardize(x: Tensor, axis, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) over ``axis`` with a fused backward."""
    axes = _norm_axis(axis, x.ndim)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def bw(g):
        gm = g.mean(axis=axes, keepdims=True)
        gym = (g * out).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - out * gym),)

    return make_op(out, (x,), bw)


# --------------------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(x.shape),)

    return make_op(x.data.reshape(shape), (x,), bw)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return make_op(np.transpose(x.data, axes), (x,), bw)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def bw(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return make_op(np.array(x.data[idx]), (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    axis = axis % xs[0].ndim
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(np.concatenate([x.data for x in xs], axis=axis), xs, bw)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_op(np.stack([x.data for x in xs], axis=axis), xs, bw)


def roll(x: Tensor, shift, axis) -> Tensor:
    neg = tuple(-s for s in shift) if isinstance(shift, tuple) else -shift

    def bw(g):
        return (np.roll(g, neg, axis),)

    return make_op(np.roll(x.data, shift, axis), (x,), bw)


def pad_zero(x: Tensor, pads: Sequence[tuple[int, int]]) -> Tensor:
    pads = tuple(pads)
    sl = tuple(slice(lo, x.shape[i] + lo) for i, (lo, _) in enumerate(pads))

    def bw(g):
        return (g[sl],)

    return make_op(np.pad(x.data, pads), (x,), bw)


def l2_normalize(x: Tensor, axis: int, eps: float = 1e-12) -> Tensor:
    return x / sqrt(tsum(x * x, axis, keepdims=True) + eps)
