"""Dense tensors with a reverse-mode gradient tape.

Operations record themselves on the innermost active :class:`Tape` whenever one
of their inputs requires gradients.  There is no broadcasting in the public
binary ops: operands must have identical dims.

    with Tape() as tape:
        loss = tsum(mul(x, x))
    grads = backward(loss, tape, wrt=[x])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidArgument, ShapeMismatch

DTYPES = {"f32": np.float32, "f64": np.float64}

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    records: list[Record] = field(default_factory=list)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def record(op: str, out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap ``out`` and put it on the active tape if any input needs gradients.

    ``vjp(g)`` maps the output adjoint to one adjoint per input (``None`` to skip).
    """
    result = Tensor(out)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.records.append(Record(op, tuple(inputs), result, vjp))
    return result


def backward(loss: Tensor, tape: Tape, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse sweep over ``tape`` from the scalar ``loss``.

    Returns a gradient for every tensor in ``wrt`` (exact zeros for those the
    loss does not reach), or, if ``wrt`` is None, for every leaf on the tape
    that requires gradients.
    """
    if loss.data.size != 1:
        raise InvalidArgument(f"loss must be a scalar, got shape {loss.shape}")
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(r.output) for r in tape.records}
    leaves: dict[int, Tensor] = {}

    for rec in reversed(tape.records):
        g = adj.pop(id(rec.output), None)
        if g is None:
            continue
        grads = rec.vjp(g)
        for t, gi in zip(rec.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise AssertionError(f"{rec.op}: adjoint {gi.shape} for input {t.shape}")
            key = id(t)
            adj[key] = adj[key] + gi if key in adj else gi
            if key not in produced:
                leaves[key] = t

    if wrt is None:
        return {t: adj[k].astype(t.dtype, copy=False) for k, t in leaves.items()}
    return {
        t: adj[id(t)].astype(t.dtype, copy=False) if id(t) in adj else np.zeros_like(t.data)
        for t in wrt
    }


def _same_dims(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: dims {a.shape} vs {b.shape}")


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_dims("add", a, b)
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_dims("sub", a, b)
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_dims("mul", a, b)
    return record("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.dtype.type(c)
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def elementwise(op: str, *args, **kw) -> Tensor:
    fns = {"add": add, "sub": sub, "mul": mul, "relu": relu, "scale": scale}
    if op not in fns:
        raise InvalidArgument(f"unknown elementwise op {op!r}")
    return fns[op](*args, **kw)


# -- shape and reductions ----------------------------------------------------

def tsum(a) -> Tensor:
    a = as_tensor(a)
    return record("sum", np.sum(a.data).reshape(()), (a,),
                  lambda g: (np.full_like(a.data, g),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return record("mean", (np.sum(a.data) / n).reshape(()).astype(a.dtype), (a,),
                  lambda g: (np.full_like(a.data, g / n),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def mean_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    n = a.shape[axis]
    out = np.sum(a.data, axis=axis) / a.dtype.type(n)

    def vjp(g):
        return (np.repeat(np.expand_dims(g / a.dtype.type(n), axis), n, axis=axis),)

    return record("mean_axis", out.astype(a.dtype), (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeMismatch(f"concat: {t.shape} vs {ref} off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return record("concat", out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def take(a, index: np.ndarray) -> Tensor:
    """``out = a.flat[index]``; the adjoint scatters back with a fixed-order sum."""
    a = as_tensor(a)
    out = a.data.reshape(-1)[index]

    def vjp(g):
        acc = np.bincount(index.reshape(-1), weights=g.reshape(-1), minlength=a.data.size)
        return (acc.astype(a.dtype).reshape(a.shape),)

    return record("take", out, (a,), vjp)


# -- finite differences ------------------------------------------------------

def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar function ``f`` at ``x``, one coordinate at a time."""
    if eps <= 0:
        raise InvalidArgument("eps must be positive")
    base = np.array(x.data, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = float(np.asarray(_value(f(Tensor(base.copy())))))
        flat[i] = old - eps
        fm = float(np.asarray(_value(f(Tensor(base.copy())))))
        flat[i] = old
        grad.reshape(-1)[i] = (fp - fm) / (2 * eps)
    return grad


def _value(v):
    return v.data if isinstance(v, Tensor) else v


EPS0 = 1e-12


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max|a - b| / max(max|a|, max|b|, 1e-12)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), EPS0)
    return float(np.max(np.abs(a - b)) / denom)


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               tol: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of ``fn(*inputs)`` with central differences, per input."""
    inputs = [Tensor(np.array(t.data, dtype=np.float64), requires_grad=True, name=t.name)
              for t in inputs]
    with Tape() as tape:
        loss = fn(*inputs)
    analytic = backward(loss, tape, wrt=inputs)
    errors = {}
    for i, x in enumerate(inputs):
        def f_i(xi, i=i):
            args = list(inputs)
            args[i] = xi
            return fn(*args)
        numeric = finite_diff_grad(f_i, x, eps)
        errors[x.name or f"arg{i}"] = rel_error(analytic[x], numeric)
    return GradCheckReport(errors, tol)
