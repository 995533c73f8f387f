"""Dense tensors with a reverse-mode tape.

Operations executed while a :class:`Tape` is active, and that touch at least
one tensor with ``requires_grad``, append a record to the tape.  Gradient
rules live in :data:`GRADIENT_RULES`, keyed by op name, so they can be
swapped out (see :func:`inject_bug`) when testing the checking harness.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_CHECKED = False
_TAPES: list["Tape"] = []


def set_checked(flag: bool) -> None:
    """Raise on NaN/Inf after every forward op when ``flag`` is set."""
    global _CHECKED
    _CHECKED = flag


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if isinstance(data, np.ndarray) and dtype is None:
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f" and requires_grad:
            raise TypeError("only floating tensors can require gradients")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: Any


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; ``backward`` walks the records once, newest
    first, and accumulates into ``.grad`` of every leaf that requires it.
    """

    def __init__(self) -> None:
        self.records: list[Record] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, ctx: Any) -> None:
        self.records.append(Record(op, inputs, output, ctx))

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(r.output) for r in self.records}
        if id(loss) not in produced:
            raise ValueError("loss was not computed on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = GRADIENT_RULES[rec.op](rec, g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise ShapeError(f"{rec.op}: gradient shape {gi.shape} != input shape {t.shape}")
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if id(t) not in produced:
                    leaves[key] = t
        out: dict[Tensor, np.ndarray] = {}
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            g = g.astype(t.dtype, copy=False)
            t.grad = g if t.grad is None else t.grad + g
            out[t] = g
        return out


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Differentiate ``loss`` on the innermost active tape."""
    if not _TAPES:
        raise RuntimeError("no active tape")
    return _TAPES[-1].backward(loss)


GradRule = Callable[[Record, np.ndarray], Sequence[Optional[np.ndarray]]]
GRADIENT_RULES: dict[str, GradRule] = {}


def _rule(name: str):
    def deco(fn: GradRule) -> GradRule:
        GRADIENT_RULES[name] = fn
        return fn

    return deco


@contextlib.contextmanager
def inject_bug(op: str, factor: float = 1.5) -> Iterator[None]:
    """Temporarily scale the gradient rule of ``op`` by ``factor`` (negative control)."""
    original = GRADIENT_RULES[op]

    def wrong(rec, g):
        return [None if x is None else x * factor for x in original(rec, g)]

    GRADIENT_RULES[op] = wrong
    try:
        yield
    finally:
        GRADIENT_RULES[op] = original


def as_tensor(x: Any, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _emit(op: str, value: np.ndarray, inputs: tuple[Tensor, ...], ctx: Any = None) -> Tensor:
    if _CHECKED and value.dtype.kind == "f" and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced non-finite values")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs and _TAPES:
        _TAPES[-1].record(op, inputs, out, ctx)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    return _emit("add", a.data + b.data, (a, b))


@_rule("add")
def _(rec, g):
    a, b = rec.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b))


@_rule("sub")
def _(rec, g):
    a, b = rec.inputs
    return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b))


@_rule("mul")
def _(rec, g):
    a, b = rec.inputs
    ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# --- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching semantics (operands of rank >= 2)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _emit("matmul", np.matmul(a.data, b.data), (a, b))


@_rule("matmul")
def _(rec, g):
    a, b = rec.inputs
    ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
    gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
    return ga, gb


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    return _emit("transpose", np.transpose(x.data, axes), (x,), axes)


@_rule("transpose")
def _(rec, g):
    return (np.transpose(g, np.argsort(rec.ctx)),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _emit("reshape", x.data.reshape(shape), (x,))


@_rule("reshape")
def _(rec, g):
    return (g.reshape(rec.inputs[0].shape),)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = tuple(xs)
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs:
        if x.ndim != len(ref) or any(x.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]} on axis {axis}")
    sizes = [x.shape[ax] for x in xs]
    return _emit("concat", np.concatenate([x.data for x in xs], axis=ax), xs, (ax, sizes))


@_rule("concat")
def _(rec, g):
    ax, sizes = rec.ctx
    return np.split(g, np.cumsum(sizes)[:-1], axis=ax)


def getitem(x: Tensor, index) -> Tensor:
    return _emit("getitem", x.data[index], (x,), index)


@_rule("getitem")
def _(rec, g):
    out = np.zeros_like(rec.inputs[0].data)
    np.add.at(out, rec.ctx, g)
    return (out,)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return _emit("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), (axis, keepdims))


@_rule("sum")
def _(rec, g):
    axis, keepdims = rec.ctx
    x = rec.inputs[0]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


# --- nonlinearities ---------------------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return _emit("sigmoid", y, (x,), y)


@_rule("sigmoid")
def _(rec, g):
    y = rec.ctx
    return (g * y * (1.0 - y),)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), y)


@_rule("tanh")
def _(rec, g):
    y = rec.ctx
    return (g * (1.0 - y * y),)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit("exp", y, (x,), y)


@_rule("exp")
def _(rec, g):
    return (g * rec.ctx,)


def log(x: Tensor) -> Tensor:
    return _emit("log", np.log(x.data), (x,))


@_rule("log")
def _(rec, g):
    return (g / rec.inputs[0].data,)


def masked_softmax(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax restricted to positions where ``mask`` is true; others are exactly 0."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not np.all(mask.any(axis=axis)):
        raise ValueError("masked_softmax: a row has no unmasked position")
    z = np.where(mask, x.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    y = (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype, copy=False)
    return _emit("masked_softmax", y, (x,), (y, axis))


@_rule("masked_softmax")
def _(rec, g):
    y, axis = rec.ctx
    return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return _emit("log_softmax", y, (x,), (y, axis))


@_rule("log_softmax")
def _(rec, g):
    y, axis = rec.ctx
    return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)


# --- indexing ---------------------------------------------------------------


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding_lookup needs integer ids")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding_lookup: id out of range for table with {table.shape[0]} rows")
    return _emit("embedding_lookup", table.data[ids], (table,), ids)


@_rule("embedding_lookup")
def _(rec, g):
    table = rec.inputs[0]
    out = np.zeros_like(table.data)
    np.add.at(out, rec.ctx, g)
    return (out,)


take = embedding_lookup


def scatter_add(x: Tensor, index: np.ndarray, size: int) -> Tensor:
    """``out[index[i]] += x[i]`` over the leading axis; ``out`` has ``size`` rows."""
    index = np.asarray(index)
    if index.shape != x.shape[:1]:
        raise ShapeError(f"scatter_add: index shape {index.shape} does not match rows of {x.shape}")
    out = np.zeros((size,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, index, x.data)
    return _emit("scatter_add", out, (x,), index)


@_rule("scatter_add")
def _(rec, g):
    return (g[rec.ctx],)


# --- regularisation and loss ------------------------------------------------


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _emit("dropout", x.data * keep, (x,), keep)


@_rule("dropout")
def _(rec, g):
    return (g * rec.ctx,)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over unmasked rows.

    ``logits`` is ``(N, V)``; ``targets`` and ``mask`` are ``(N,)``.
    """
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    weights = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=float)
    count = weights.sum()
    if count == 0:
        raise ValueError("cross_entropy: every position is masked")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    nll = -logp[np.arange(len(targets)), targets]
    w = (weights / count).astype(logits.dtype)
    value = np.asarray(np.sum(nll * w), dtype=logits.dtype)
    return _emit("cross_entropy", value, (logits,), (logp, targets, w))


@_rule("cross_entropy")
def _(rec, g):
    logp, targets, w = rec.ctx
    grad = np.exp(logp)
    grad[np.arange(len(targets)), targets] -= 1.0
    return (grad * (w[:, None] * g),)
