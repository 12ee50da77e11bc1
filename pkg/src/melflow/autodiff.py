"""Dense tensors with reverse-mode automatic differentiation.

Everything downstream (text encoder, coupling steps, priors, losses) is built
from the ops in this module.  The engine is deliberately small:

* values are numpy arrays in float32 (training default) or float64
  (verification suites);
* broadcasting is restricted to leading batch axes -- anything else must go
  through an explicit :func:`expand`;
* graphs are built eagerly and freed after :func:`backward`; gradients
  accumulate on leaf tensors until reset.

Randomness throughout the package comes from :func:`make_rng`, a
counter-based Philox generator, so fixed seeds reproduce bitwise.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic counter-based RNG (numpy Philox) for a given seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff.

    ``data`` is always a numpy array of float32 or float64.  ``grad`` is
    populated (and accumulated across repeated backward calls) only on leaf
    tensors created with ``requires_grad=True``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"], vjp) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _check_dtypes(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"{op}: mixed dtypes {a.data.dtype} and {b.data.dtype}")


def _check_broadcast(op: str, sa: tuple, sb: tuple) -> None:
    """Allow numpy broadcasting only across leading axes (scalars always ok)."""
    if sa == sb or sa == () or sb == ():
        return
    n = max(len(sa), len(sb))
    pa = (1,) * (n - len(sa)) + sa
    pb = (1,) * (n - len(sb)) + sb
    matched_seen = False
    for da, db in zip(pa, pb):
        if da == db:
            matched_seen = True
            continue
        if 1 not in (da, db):
            raise ValueError(f"{op}: operand shapes {sa} and {sb} do not conform")
        if matched_seen:
            raise ValueError(
                f"{op}: broadcast of {sa} with {sb} is only supported on leading axes; "
                "use expand() for interior axes"
            )


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after leading-axis broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_dtypes("add", a, b)
    _check_broadcast("add", a.shape, b.shape)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), vjp)


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_dtypes("sub", a, b)
    _check_broadcast("sub", a.shape, b.shape)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(out, (a, b), vjp)


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_dtypes("mul", a, b)
    _check_broadcast("mul", a.shape, b.shape)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return Tensor._from_op(out, (a, b), vjp)


def div(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_dtypes("div", a, b)
    _check_broadcast("div", a.shape, b.shape)
    out = a.data / b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g / bd, a.shape), _unbroadcast(-g * ad / (bd * bd), b.shape)

    return Tensor._from_op(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        return (-g,)

    return Tensor._from_op(-a.data, (a,), vjp)


# -- matrix products --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.  Supports 2-D weights on the right of a batched left
    operand, or fully matched leading batch dims."""
    _check_dtypes("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: batch dimensions disagree for {a.shape} and {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        if bd.ndim == 2 and gb.ndim > 2:
            gb = gb.sum(axis=tuple(range(gb.ndim - 2)))
        return ga, gb

    return Tensor._from_op(out, (a, b), vjp)


# -- nonlinearities ----------------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return Tensor._from_op(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return Tensor._from_op(out, (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * (0.5 / out),)

    return Tensor._from_op(out, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Tensor._from_op(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return Tensor._from_op(out, (a,), vjp)


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(np.zeros((), dtype=a.data.dtype), a.data)
    x = a.data

    def vjp(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return Tensor._from_op(out, (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._from_op(out, (a,), vjp)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        gg = np.expand_dims(g, axis) if not keepdims else g
        return (gg * soft,)

    return Tensor._from_op(out, (a,), vjp)


# -- reductions ---------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return Tensor._from_op(out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[i] for i in axis]))
    else:
        count = a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)
    out = np.asarray(out)
    shape = a.shape

    def vjp(g):
        if axis is None:
            gg = g
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, shape).copy(),)

    return Tensor._from_op(out, (a,), vjp)


def variance(a: Tensor, axis, keepdims: bool = False) -> Tensor:
    """Population variance along ``axis`` (composed from primitives)."""
    mu = tmean(a, axis=axis, keepdims=True)
    centered = sub(a, expand(mu, a.shape))
    return tmean(mul(centered, centered), axis=axis, keepdims=keepdims)


# -- shape manipulation ----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return Tensor._from_op(out, (a,), vjp)


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast to ``shape`` (materialized)."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as err:
        raise ValueError(f"expand: cannot expand {a.shape} to {shape}") from err
    old = a.shape

    def vjp(g):
        extra = len(shape) - len(old)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, s in enumerate(old) if s == 1 and shape[extra + i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return Tensor._from_op(out, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ValueError(f"concat: mixed dtypes {dt} and {t.data.dtype}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out, tuple(tensors), vjp)


def narrow(a: Tensor, key) -> Tensor:
    """Basic slicing (ints and slices only); gradient scatters back."""
    out = a.data[key]
    shape = a.shape
    if out.base is not None:
        out = out.copy()

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return Tensor._from_op(out, (a,), vjp)


def reverse(a: Tensor, axis: int) -> Tensor:
    """Reverse along one axis; an involution, grads flip back the same way."""
    out = np.flip(a.data, axis=axis).copy()

    def vjp(g):
        return (np.flip(g, axis=axis).copy(),)

    return Tensor._from_op(out, (a,), vjp)


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: gather rows of a 2-D table by integer ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ValueError(f"take_rows: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"take_rows: id out of range for table with {table.shape[0]} rows"
        )
    out = table.data[ids]
    shape = table.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return Tensor._from_op(out, (table,), vjp)


def take_time(a: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row gather along axis 1: out[b, t] = a[b, idx[b, t]].

    Used to reverse the valid region of padded sequences without disturbing
    the padding tail.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim < 2 or idx.shape != a.shape[:2]:
        raise ValueError(f"take_time: index shape {idx.shape} does not match {a.shape}")
    expanded = idx.reshape(idx.shape + (1,) * (a.ndim - 2))
    out = np.take_along_axis(a.data, np.broadcast_to(expanded, a.shape), axis=1)
    shape = a.shape
    b_idx = np.repeat(np.arange(shape[0]), idx.shape[1])
    t_idx = idx.reshape(-1)

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, (b_idx, t_idx), g.reshape((-1,) + shape[2:]))
        return (full,)

    return Tensor._from_op(out, (a,), vjp)


def detach(a: Tensor) -> Tensor:
    return a.detach()


# -- backward pass ----------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Accumulates ``grad`` on every leaf tensor with ``requires_grad=True``;
    calling again without resetting grads keeps accumulating.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        # free the subgraph bookkeeping as we go
        node._parents = ()
        node._vjp = None


def parameter(data, name: str, dtype=np.float32) -> Tensor:
    """Leaf tensor that the optimizer will update."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True, name=name)


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def stack_time(tensors: Iterable[Tensor]) -> Tensor:
    """Stack per-step (B, F) tensors into (B, T, F)."""
    ts = [reshape(t, (t.shape[0], 1) + t.shape[1:]) for t in tensors]
    return concat(ts, axis=1)
