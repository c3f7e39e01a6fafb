"""Dense tensors with reverse-mode gradient tracking.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to input gradients.
:func:`backward` orders the recorded graph topologically (a :class:`Tape`),
replays the chain rule once, and then releases the graph.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(value, dtype=None) -> np.ndarray:
    if isinstance(value, Tensor):
        value = value.data
    arr = np.asarray(value)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = ""
        self._released = False

    # ----------------------------------------------------------------- basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op == ""

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of a recorded operation.

    ``backward_fn(grad)`` must return one gradient (or None) per parent.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return make_op(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    # No guard at b == 0: callers add an epsilon to every denominator.
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return make_op(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def abs_(a: Tensor) -> Tensor:
    # np.sign(0) == 0 gives the zero subgradient at the kink.
    s = np.sign(a.data)
    return make_op(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_op(ad * ad, (a,), lambda g: (2 * g * ad,), "square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (g / (2 * out),), "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split form keeps exp() from overflowing for large |x|
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return make_op(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_op(np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,), lambda g: (g * mask,), "relu")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return make_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "abs": abs_,
    "sqrt": sqrt,
    "square": square,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch by name; unary kinds ignore ``b``."""
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    if kind in ("abs", "sqrt", "square"):
        return fn(_wrap(a))
    return fn(a, b)


# ------------------------------------------------------------------ reductions
def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(sorted(a % ndim if ndim else a for a in axis))
    for a in axis:
        if not -ndim <= a < ndim:
            raise ValueError(f"axis {a} out of range for {ndim}-d tensor")
    return axes


def _expand(g: np.ndarray, shape, axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes) if axes else g
    return np.broadcast_to(g, shape)


def _count(shape, axes) -> int:
    n = 1
    for a in axes:
        n *= shape[a]
    if n == 0:
        raise ValueError("reduction over an empty set")
    return n


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    _count(a.shape, axes)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return make_op(np.asarray(out), (a,), lambda g: (_expand(g, shape, axes, keepdims).copy(),), "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = _count(a.shape, axes)
    shape = a.shape
    out = a.data.mean(axis=axes, keepdims=keepdims)
    return make_op(np.asarray(out), (a,), lambda g: (_expand(g / n, shape, axes, keepdims).copy(),), "mean")


def std(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population standard deviation; the gradient is 0 where std == 0."""
    axes = _norm_axes(axis, a.ndim)
    n = _count(a.shape, axes)
    centered = a.data - a.data.mean(axis=axes, keepdims=True)
    s = np.sqrt((centered * centered).mean(axis=axes, keepdims=True))

    def bw(g):
        g = g if keepdims else np.expand_dims(g, axes)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(s > 0, g / (n * s), 0)
        return (scale * centered,)

    out = s if keepdims else s.squeeze(axis=axes)
    return make_op(np.asarray(out), (a,), bw, "std")


def amin(a, axis=None, keepdims: bool = False) -> Tensor:
    """Detached minimum: no gradient flows back through it."""
    a = _wrap(a)
    _count(a.shape, _norm_axes(axis, a.ndim))
    return Tensor(np.asarray(a.data.min(axis=_norm_axes(axis, a.ndim), keepdims=keepdims)))


def amax(a, axis=None, keepdims: bool = False) -> Tensor:
    """Detached maximum: no gradient flows back through it."""
    a = _wrap(a)
    _count(a.shape, _norm_axes(axis, a.ndim))
    return Tensor(np.asarray(a.data.max(axis=_norm_axes(axis, a.ndim), keepdims=keepdims)))


REDUCTIONS = {"sum": sum_, "mean": mean, "std": std, "min": amin, "max": amax}


def reduce(kind: str, a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    try:
        fn = REDUCTIONS[kind]
    except KeyError:
        raise ValueError(f"unknown reduction {kind!r}") from None
    return fn(a, axis, keepdims)


# -------------------------------------------------------------------- shaping
def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g) if _has_advanced(index) else _slice_add(full, index, g)
        return (full,)

    return make_op(a.data[index], (a,), bw, "getitem")


def _has_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def _slice_add(full, index, g):
    full[index] += g


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return make_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def where_const(mask: np.ndarray, a: Tensor, fill: float) -> Tensor:
    """``a`` where ``mask`` else the constant ``fill``; gradient masked accordingly."""
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, np.asarray(fill, dtype=a.dtype))
    return make_op(out.astype(a.dtype, copy=False), (a,), lambda g: (unbroadcast(g * mask, a.shape),), "where")


# ------------------------------------------------------------------- backward
@dataclass
class Tape:
    """Operations reachable from a root, in topological (forward) order."""

    root: Tensor
    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(root, order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    The graph is released afterwards; calling again on the same ``loss``
    raises ``RuntimeError``. ``params`` (optional) get zero gradients when
    they are unreachable from ``loss``.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise RuntimeError("backward called twice on the same graph; re-run the forward pass")
    tape = Tape.record(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if node.requires_grad and g is not None:
                node.grad = g.astype(node.dtype, copy=True) if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in tape.nodes:
        if not node.is_leaf:
            node._parents = ()
            node._backward = None
            node._released = True
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    return tape
