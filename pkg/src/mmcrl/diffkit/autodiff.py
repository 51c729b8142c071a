"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records primitive operations while it is open.  Values are
:class:`Tensor` objects wrapping a numpy array; every tensor carries an integer
id that keys the gradient map returned by :func:`backward`.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> backward(tape, loss)[x.id]
    array([2., 4.])
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition of an operation does not hold."""


_ids = itertools.count(1)
_tapes: list["Tape"] = []


class Tensor:
    """Dense float64 array participating in differentiation."""

    __array_priority__ = 100.0
    __slots__ = ("data", "requires_grad", "id", "name", "_parents", "_vjp", "_recorded")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, check: bool = True):
        arr = np.array(data, dtype=np.float64)
        if check and not np.all(np.isfinite(arr)):
            raise ContractError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._recorded = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._recorded

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, id={self.id})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __getitem__ = lambda self, idx: getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


class Tape:
    """Ordered record of primitive operations.

    Only one tape is active at a time per thread of use; nesting pushes a new
    tape and restores the outer one on exit.
    """

    def __init__(self):
        self.records: list[Tensor] = []
        self.watched: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes.remove(self)

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self.watched[t.id] = t

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        grads = backward(self, loss)
        return [grads.get(p.id, np.zeros_like(p.data)) for p in params]


def active_tape() -> Tape | None:
    return _tapes[-1] if _tapes else None


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return _const(np.asarray(x, dtype=np.float64))


def _const(arr: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = False
    t.id = next(_ids)
    t.name = None
    t._parents = ()
    t._vjp = None
    t._recorded = False
    return t


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = _const(np.asarray(data, dtype=np.float64))
    tape = active_tape()
    if tape is not None and any(p.tracked for p in parents):
        out._parents = parents
        out._vjp = vjp
        out._recorded = True
        tape.records.append(out)
        for p in parents:
            if p.requires_grad and not p._recorded:
                tape.watched.setdefault(p.id, p)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every tape value.

    Watched leaves that do not influence ``loss`` receive zero gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(tape.records):
        g = grads.get(node.id)
        if g is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.tracked:
                continue
            if p.id in grads:
                grads[p.id] = grads[p.id] + pg
            else:
                grads[p.id] = pg
    for tid, t in tape.watched.items():
        if tid not in grads:
            grads[tid] = np.zeros_like(t.data)
    return grads


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


# -- elementwise unary -------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    """``x`` where ``x >= 0``, ``slope * x`` elsewhere."""
    a = as_tensor(a)
    scale = np.where(a.data >= 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# -- reductions and shape ----------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return sum_(a, axis=axis, keepdims=keepdims) / float(n)


def norm(a, axis=-1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def vjp(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (a.data * np.expand_dims(scale, axis),)

    return _make(out, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    parts = idx if isinstance(idx, tuple) else (idx,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def vjp(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), vjp)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, vjp)


def trace(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"trace needs a square matrix, got {a.shape}")
    eye = np.eye(a.shape[0])
    return _make(np.trace(a.data), (a,), lambda g: (g * eye,))


# -- products ----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def einsum(subscripts: str, *operands) -> Tensor:
    """Explicit-output einsum (``'ij,jk->ik'``) with gradients for every operand."""
    ops = tuple(as_tensor(o) for o in operands)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(ops):
        raise DimensionError("einsum operand count mismatch")
    try:
        out = np.einsum(subscripts, *(o.data for o in ops), optimize=len(ops) > 2)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def vjp(g):
        grads = []
        for k, (sub_k, op_k) in enumerate(zip(in_subs, ops)):
            if not op_k.tracked:
                grads.append(None)
                continue
            others = [(s, o.data) for j, (s, o) in enumerate(zip(in_subs, ops)) if j != k]
            avail = set(out_sub).union(*(set(s) for s, _ in others))
            kept = "".join(c for c in sub_k if c in avail)
            expr = ",".join([out_sub] + [s for s, _ in others]) + "->" + kept
            gk = np.einsum(expr, g, *(d for _, d in others), optimize=len(others) > 1)
            if kept != sub_k:
                # indices summed only inside this operand: broadcast back
                shape = [op_k.shape[i] if c in avail else 1 for i, c in enumerate(sub_k)]
                gk = np.broadcast_to(gk.reshape(shape), op_k.shape).copy()
            grads.append(gk)
        return tuple(grads)

    return _make(out, ops, vjp)
