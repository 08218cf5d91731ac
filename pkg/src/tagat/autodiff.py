"""Define-by-run reverse-mode automatic differentiation on numpy arrays.

Every differentiable operation executed while gradients are enabled appends a
node to the active :class:`Tape`. ``backward`` walks that tape once, in reverse
insertion order, and accumulates gradients into the leaf tensors.

    >>> w = Tensor(np.ones((2, 3)), requires_grad=True)
    >>> x = Tensor(np.array([1.0, 2.0, 3.0]))
    >>> with Tape() as tape:
    ...     loss = (w @ x).sum()
    >>> grads = backward(loss, [w])
"""

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core_math import sigmoid as _sig
from .errors import NonScalarLoss, ShapeMismatch

_state = threading.local()


def _tape_stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
        _state.grad_enabled = True
    return _state.tapes


def grad_enabled() -> bool:
    _tape_stack()
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them."""
    _tape_stack()
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@dataclass
class _Node:
    out: "Tensor"
    inputs: tuple
    backward: Callable


class Tape:
    """Ordered record of operations; usable as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        for node in self.nodes:
            node.out._tape = None
        self.nodes.clear()


def current_tape() -> Tape:
    stack = _tape_stack()
    if stack:
        return stack[-1]
    if not hasattr(_state, "default_tape"):
        _state.default_tape = Tape()
    return _state.default_tape


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "_tape", "__weakref__")
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, dtype=None):
        value = np.asarray(value, dtype=dtype)
        if not np.issubdtype(value.dtype, np.floating):
            value = value.astype(np.float64)
        self.value = value
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self):
        return self._tape is None

    def numpy(self):
        return self.value

    def item(self):
        return self.value.item()

    def detach(self):
        return Tensor(self.value)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, like=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if isinstance(like, Tensor) else None
    return Tensor(np.asarray(x, dtype=dtype))


def _record(value, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(value)
    if not grad_enabled() or not any(t.requires_grad for t in inputs):
        return out
    tape = current_tape()
    for t in inputs:
        if t._tape is not None and t._tape is not tape:
            raise RuntimeError("tensor belongs to a different tape")
    out.requires_grad = True
    out._tape = tape
    tape.nodes.append(_Node(out, tuple(inputs), backward))
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    _broadcast_check(a, b, "add")
    return _record(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    _broadcast_check(a, b, "sub")
    return _record(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    _broadcast_check(a, b, "mul")
    av, bv = a.value, b.value
    return _record(
        av * bv, (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
    )


def div(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    _broadcast_check(a, b, "div")
    av, bv = a.value, b.value
    out = av / bv
    return _record(
        out, (a, b),
        lambda g: (_unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)),
    )


def exp(x):
    out = np.exp(x.value)
    return _record(out, (x,), lambda g: (g * out,))


def log(x):
    xv = x.value
    return _record(np.log(xv), (x,), lambda g: (g / xv,))


def sqrt(x):
    out = np.sqrt(x.value)
    return _record(out, (x,), lambda g: (g / (2 * out),))


def clip(x, lo, hi):
    """Clamp into [lo, hi]; the gradient is zero where clamping is active."""
    xv = x.value
    inside = (xv >= lo) & (xv <= hi)
    return _record(np.clip(xv, lo, hi), (x,), lambda g: (g * inside,))


def sigmoid(x):
    out = _sig(x.value).astype(x.dtype, copy=False)
    return _record(out, (x,), lambda g: (g * out * (1 - out),))


def silu(x):
    xv = x.value
    s = _sig(xv).astype(x.dtype, copy=False)
    return _record(xv * s, (x,), lambda g: (g * (s + xv * s * (1 - s)),))


def leaky_relu(x, slope=0.2):
    xv = x.value
    pos = xv >= 0
    return _record(np.where(pos, xv, slope * xv), (x,), lambda g: (np.where(pos, g, slope * g),))


def softmax_rows(x):
    """Row-wise softmax of a 2-D tensor (last axis for 1-D)."""
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record(out, (x,), back)


# shape and linear algebra

def matmul(a, b):
    a, b = as_tensor(a, b), as_tensor(b, a)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    av, bv = a.value, b.value

    def back(g):
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _record(av @ bv, (a, b), back)


def transpose(x):
    return _record(x.value.T, (x,), lambda g: (g.T,))


def reshape(x, shape):
    old = x.shape
    return _record(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def tsum(x, axis=None, keepdims=False):
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), back)


def mean(x, axis=None, keepdims=False):
    count = x.value.size if axis is None else x.shape[axis]
    return tsum(x, axis, keepdims) * (1.0 / count)


def index(x, key):
    """Basic or advanced numpy indexing; gradients scatter back with ``np.add.at``."""
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, key, g)
        return (full,)

    return _record(x.value[key], (x,), back)


def row_gather(x, idx):
    """Rows ``x[idx]`` for an integer index array."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeMismatch(f"row_gather: index out of range for {x.shape[0]} rows")
    return index(x, idx)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].ndim
    ax = axis % ref
    for t in tensors[1:]:
        if t.ndim != ref or any(
            s1 != s2 for d, (s1, s2) in enumerate(zip(t.shape, tensors[0].shape)) if d != ax
        ):
            raise ShapeMismatch(
                f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=ax))

    return _record(np.concatenate([t.value for t in tensors], axis=ax), tensors, back)


# segment reductions over rows

def _check_segments(x, seg, n):
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape != (x.shape[0],):
        raise ShapeMismatch(f"segment ids of shape {seg.shape} do not match {x.shape[0]} rows")
    if seg.size and (seg.min() < 0 or seg.max() >= n):
        raise ShapeMismatch(f"segment ids out of range for {n} segments")
    return seg


def segment_sum(x, seg, n):
    seg = _check_segments(x, seg, n)
    out = np.zeros((n,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, seg, x.value)
    return _record(out, (x,), lambda g: (g[seg],))


def segment_mean(x, seg, n):
    seg = _check_segments(x, seg, n)
    counts = np.bincount(seg, minlength=n).astype(x.dtype)
    if np.any(counts == 0):
        raise ShapeMismatch("segment_mean: empty segment")
    counts = counts.reshape((n,) + (1,) * (x.ndim - 1))
    return segment_sum(x, seg, n) * Tensor(1.0 / counts)


def segment_max(x, seg, n):
    """Per-segment maximum; the gradient goes to the lowest-index maximal row."""
    seg = _check_segments(x, seg, n)
    if np.any(np.bincount(seg, minlength=n) == 0):
        raise ShapeMismatch("segment_max: empty segment")
    xv = x.value
    out = np.full((n,) + xv.shape[1:], -np.inf, dtype=xv.dtype)
    np.maximum.at(out, seg, xv)
    rows = np.arange(xv.shape[0]).reshape((-1,) + (1,) * (xv.ndim - 1))
    cand = np.where(xv == out[seg], rows, xv.shape[0])
    first = np.full(out.shape, xv.shape[0], dtype=np.int64)
    np.minimum.at(first, seg, cand)
    cols = np.indices(out.shape)[1:]

    def back(g):
        full = np.zeros_like(xv)
        np.add.at(full, (first, *cols), g)
        return (full,)

    return _record(out, (x,), back)


def dropout(x, p, train, rng=None):
    """Inverted dropout. Identity in eval mode or when ``p == 0``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x
    keep = rng.random(x.shape) >= p
    scale = (keep / (1.0 - p)).astype(x.dtype)
    return _record(x.value * scale, (x,), lambda g: (g * scale,))


# reverse pass

def backward(loss: Tensor, params: Sequence[Tensor] = None):
    """Backpropagate from a scalar loss.

    Leaf tensors that took part receive a fresh ``.grad``. When ``params`` is
    given, a list of gradients aligned with it is returned, with explicit zeros
    for parameters the loss does not depend on. The tape is cleared afterwards.
    """
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    grads = {}
    leaves = {}
    tape = loss._tape
    if tape is not None:
        grads[id(loss)] = np.ones_like(loss.value)
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, tg in zip(node.inputs, in_grads):
                if not t.requires_grad or tg is None:
                    continue
                tg = np.asarray(tg, dtype=t.dtype).reshape(t.shape)
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + tg
                else:
                    grads[key] = tg
                if t.is_leaf:
                    leaves[key] = t
        tape.clear()
    for key, t in leaves.items():
        t.grad = grads[key]
    if params is None:
        return None
    return [grads[id(p)] if id(p) in leaves else np.zeros_like(p.value) for p in params]


def grad_check(f, params: Sequence[Tensor], eps=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a zero-argument callable building a scalar loss from ``params``.
    The relative error of each coordinate uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    with Tape():
        loss = f()
        analytic = backward(loss, params)
    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            for i in np.ndindex(p.shape):
                orig = p.value[i]
                p.value[i] = orig + eps
                up = float(f().value)
                p.value[i] = orig - eps
                down = float(f().value)
                p.value[i] = orig
                num = (up - down) / (2 * eps)
                ana = float(a[i])
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                worst = max(worst, err)
    return worst
