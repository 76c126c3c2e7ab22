"""Dense float64 tensors with tape-based reverse-mode differentiation.

Forward arithmetic is plain numpy.  Gradients are tracked only while a
``Tape`` is active: operations executed inside ``with Tape() as tape:``
append records in execution order (which is already a topological order),
and ``backward(tape, loss)`` replays them once in reverse.  Outside a tape
everything runs grad-free at numpy speed, which is how evaluation and the
"other side held constant" phases of alternating optimization are run.

Tensors are treated as immutable once created; optimizers that update
parameters in place must do so between passes, never while a tape that
references them is still alive.
"""

from __future__ import annotations

import threading

import numpy as np

_active = threading.local()


def _tape_stack() -> list:
    stack = getattr(_active, "stack", None)
    if stack is None:
        stack = []
        _active.stack = stack
    return stack


class Tensor:
    """A dense float64 array plus a flag marking it for gradient tracking."""

    __slots__ = ("values", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed operations; single-owner, re-enterable.

    Re-entering the same tape appends further records, which keeps the
    topological ordering intact (later records only consume earlier
    outputs).  ``backward`` may be called any number of times; each call
    rebuilds the gradient map from scratch, so repeated calls yield
    identical results.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _tape_stack().pop()
        if popped is not self:
            raise RuntimeError("tapes must unwind in LIFO order")
        return False

    def __len__(self) -> int:
        return len(self._records)


def _current_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _emit(out: Tensor, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    tape = _current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._records.append((out, inputs, grad_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, Tensor]:
    """Gradients of a scalar loss w.r.t. every grad-tracked tensor on the tape.

    Returns a map keyed by tensor identity; an absent entry means the
    gradient is zero.  Fan-out is accumulated by summation.
    """
    if not isinstance(loss, Tensor) or loss.shape != ():
        shape = getattr(loss, "shape", None)
        raise ValueError(f"backward expects a scalar () loss tensor, got shape {shape}")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones(())}
    for out, inputs, grad_fn in reversed(tape._records):
        g = grads.get(out)
        if g is None:
            continue
        for inp, gin in zip(inputs, grad_fn(g)):
            if gin is None or not inp.requires_grad:
                continue
            acc = grads.get(inp)
            grads[inp] = gin if acc is None else acc + gin
    return {t: Tensor(g) for t, g in grads.items()}


def _ordered_sum(values: np.ndarray, axis: int) -> np.ndarray:
    # Sum over a sorted copy: the result depends only on the multiset of
    # addends, making softmax denominators exactly permutation-invariant.
    return np.sort(values, axis=axis).sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# operations


def matmul(a, b) -> Tensor:
    """Matrix/vector product for 1-D and 2-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ValueError(f"matmul supports 1-D/2-D operands, got shapes {a.shape} @ {b.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree for shapes {a.shape} @ {b.shape}")
    out = Tensor(av @ bv)

    def grad_fn(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return _emit(out, (a, b), grad_fn)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.values.ndim != 2:
        raise ValueError(f"transpose expects a 2-D tensor, got shape {a.shape}")
    out = Tensor(np.ascontiguousarray(a.values.T))

    def grad_fn(g):
        return (g.T,)

    return _emit(out, (a,), grad_fn)


def add(a, b) -> Tensor:
    """Elementwise addition; also accepts a 1-D bias added to every row."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        out = Tensor(a.values + b.values)

        def grad_fn(g):
            return g, g

    elif a.values.ndim == 2 and b.values.ndim == 1 and a.shape[1] == b.shape[0]:
        out = Tensor(a.values + b.values)

        def grad_fn(g):
            return g, g.sum(axis=0)

    else:
        raise ValueError(f"add: incompatible shapes {a.shape} + {b.shape}")
    return _emit(out, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"sub: incompatible shapes {a.shape} - {b.shape}")
    out = Tensor(a.values - b.values)

    def grad_fn(g):
        return g, -g

    return _emit(out, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: incompatible shapes {a.shape} * {b.shape}")
    av, bv = a.values, b.values
    out = Tensor(av * bv)

    def grad_fn(g):
        return g * bv, g * av

    return _emit(out, (a, b), grad_fn)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.values * c)

    def grad_fn(g):
        return (g * c,)

    return _emit(out, (a,), grad_fn)


def neg(a) -> Tensor:
    return scale(a, -1.0)


def sum_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.values.sum(axis=axis))
    shape = a.shape

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _emit(out, (a,), grad_fn)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.values.sum())
    shape = a.shape

    def grad_fn(g):
        return (np.full(shape, float(g)),)

    return _emit(out, (a,), grad_fn)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.values.size
    out = Tensor(a.values.mean())
    shape = a.shape

    def grad_fn(g):
        return (np.full(shape, float(g) / n),)

    return _emit(out, (a,), grad_fn)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.values.reshape(shape).copy())
    orig = a.shape

    def grad_fn(g):
        return (g.reshape(orig),)

    return _emit(out, (a,), grad_fn)


def concat(parts, axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis; backward splits the gradient."""
    ts = [as_tensor(p) for p in parts]
    if not ts:
        raise ValueError("concat needs at least one part")
    try:
        out = Tensor(np.concatenate([t.values for t in ts], axis=axis))
    except ValueError as exc:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}") from exc
    sizes = [t.shape[axis] for t in ts]
    split_at = np.cumsum(sizes[:-1])

    def grad_fn(g):
        return tuple(np.split(g, split_at, axis=axis))

    return _emit(out, tuple(ts), grad_fn)


def take_rows(a, indices) -> Tensor:
    """Row lookup into a 2-D table (embedding-style); backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.values.ndim != 2 or idx.ndim != 1:
        raise ValueError(f"take_rows expects a 2-D table and 1-D indices, got {a.shape} / {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"take_rows: index out of range for table with {a.shape[0]} rows")
    out = Tensor(a.values[idx])
    shape = a.shape

    def grad_fn(g):
        acc = np.zeros(shape)
        np.add.at(acc, idx, g)
        return (acc,)

    return _emit(out, (a,), grad_fn)


def take_per_row(a, indices) -> Tensor:
    """Pick one element per row of a 2-D tensor: out[i] = a[i, indices[i]]."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.values.ndim != 2 or idx.shape != (a.shape[0],):
        raise ValueError(f"take_per_row expects (n,m) tensor and (n,) indices, got {a.shape} / {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise IndexError(f"take_per_row: column index out of range for shape {a.shape}")
    rows = np.arange(a.shape[0])
    out = Tensor(a.values[rows, idx])
    shape = a.shape

    def grad_fn(g):
        acc = np.zeros(shape)
        acc[rows, idx] = g
        return (acc,)

    return _emit(out, (a,), grad_fn)


def relu(a) -> Tensor:
    a = as_tensor(a)
    av = a.values
    out = Tensor(np.maximum(av, 0.0))

    def grad_fn(g):
        return (g * (av > 0.0),)

    return _emit(out, (a,), grad_fn)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.values)
    out = Tensor(y)

    def grad_fn(g):
        return (g * (1.0 - y * y),)

    return _emit(out, (a,), grad_fn)


def activation(a, kind: str) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "tanh":
        return tanh(a)
    raise ValueError(f"unknown activation kind {kind!r}")


def softmax_axis(a, axis: int, temperature: float = 1.0) -> Tensor:
    """Temperature softmax along one axis, computed with max-subtraction.

    Logits are divided by the temperature before exponentiation.  The
    normalizing sum runs over sorted addends, so the output depends only
    on the multiset of values along the axis, not their order.
    """
    a = as_tensor(a)
    t = float(temperature)
    if t <= 0.0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    z = a.values / t
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / _ordered_sum(e, axis)
    out = Tensor(y)

    def grad_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner) / t,)

    return _emit(out, (a,), grad_fn)


def log_softmax_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    z = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = _ordered_sum(e, axis)
    out = Tensor(z - np.log(s))
    p = e / s

    def grad_fn(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _emit(out, (a,), grad_fn)
