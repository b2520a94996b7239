"""Dense f64 tensors (rank <= 3) with a reverse-mode autodiff tape.

Operations record themselves on the innermost active ``Tape`` whenever any
input has ``requires_grad``. Running the same code with no tape active is
the inference path: identical numerics, nothing recorded.

No broadcasting anywhere; shapes must match exactly and replication is done
with the explicit ``tile_rows`` / ``tile_cols`` ops.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

_MAX_RANK = 3

# Stack of active tapes; ops record on the innermost one.
_TAPES: list["Tape"] = []


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    Tensors built directly from data are leaves; op outputs are not.
    ``backward`` fills ``.grad`` on leaves only, intermediate gradients
    live on the tape's flow.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > _MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds maximum rank {_MAX_RANK}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same values that never takes gradients."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # Operator sugar; scalars go through the *_scalar ops, no auto-broadcast.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive ops; recording order is topological."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self.nodes.append((out, inputs, vjp))

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPES.pop()
        assert popped is self, "tapes must be exited innermost-first"


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def record_op(out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    """Attach ``out = f(inputs)`` to the active tape, if any.

    ``vjp(g)`` must return one gradient array (or None) per input. Exposed so
    other modules (e.g. the sparse graph op) can define tape-aware primitives.
    """
    out.is_leaf = False
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, vjp)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate reverse-mode gradients of ``loss`` into leaf ``.grad``.

    Traverses the tape in exact reverse recording order. Calling twice
    without ``zero_grad`` doubles every gradient.
    """
    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.nodes:
        raise ContractError("backward on an empty tape")
    flow: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for out, inputs, vjp in reversed(tape.nodes):
        g = flow.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            if t.is_leaf:
                if t.grad is None:
                    # vjps may return aliases of the upstream gradient
                    t.grad = np.array(gi)
                else:
                    t.grad += gi
            else:
                key = id(t)
                if key in flow:
                    flow[key] = flow[key] + gi
                else:
                    flow[key] = gi


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


# ---------------------------------------------------------------------------
# binary elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return record_op(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return record_op(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    return record_op(out, (a, b), lambda g: (g * bd, g * ad))


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + c)
    return record_op(out, (a,), lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    return record_op(out, (a,), lambda g: (g * c,))


# ---------------------------------------------------------------------------
# unary elementwise

def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    return record_op(out, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    # explicit ufunc chain into one buffer; the naive expression is slow here
    y = np.multiply(a.data, -1.0)
    np.exp(y, out=y)
    np.add(y, 1.0, out=y)
    np.divide(1.0, y, out=y)
    out = Tensor(y)
    return record_op(out, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    return record_op(out, (a,), lambda g: (g * (1.0 - y * y),))


def absval(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    s = np.sign(a.data)  # subgradient 0 at the kink
    return record_op(out, (a,), lambda g: (g * s,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    ad = a.data
    return record_op(out, (a,), lambda g: (g / ad,))


# ---------------------------------------------------------------------------
# softmax family

def softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """exp(x_i/t) / sum_j exp(x_j/t), max-subtracted for stability."""
    if temperature <= 0.0:
        raise ParameterError(f"softmax temperature must be > 0, got {temperature}")
    z = x.data / temperature
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        inner = np.sum(g * y, axis=axis, keepdims=True)
        return ((y * (g - inner)) / temperature,)

    return record_op(out, (x,), vjp)


def log_softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    if temperature <= 0.0:
        raise ParameterError(f"log_softmax temperature must be > 0, got {temperature}")
    z = x.data / temperature
    z = z - np.max(z, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = Tensor(z - lse)
    sm = np.exp(z - lse)

    def vjp(g):
        return ((g - sm * np.sum(g, axis=axis, keepdims=True)) / temperature,)

    return record_op(out, (x,), vjp)


# ---------------------------------------------------------------------------
# matmul and shape ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 2 or b.rank != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims disagree, {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return (ga, gb)

    return record_op(out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.rank != 2:
        raise DimensionError(f"transpose needs rank 2, got {a.shape}")
    out = Tensor(a.data.T.copy())
    return record_op(out, (a,), lambda g: (g.T,))


def swap01(a: Tensor) -> Tensor:
    """Exchange the first two axes of a rank-3 tensor."""
    if a.rank != 3:
        raise DimensionError(f"swap01 needs rank 3, got {a.shape}")
    out = Tensor(np.ascontiguousarray(a.data.transpose(1, 0, 2)))
    return record_op(out, (a,), lambda g: (g.transpose(1, 0, 2),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if len(shape) > _MAX_RANK:
        raise DimensionError(f"reshape to rank {len(shape)} exceeds maximum rank {_MAX_RANK}")
    if math.prod(shape) != a.size:
        raise DimensionError(f"reshape {a.shape} -> {shape}: element counts differ")
    out = Tensor(a.data.reshape(shape))
    src = a.shape
    return record_op(out, (a,), lambda g: (g.reshape(src),))


def slice0(a: Tensor, i: int) -> Tensor:
    """Index along axis 0, dropping that axis."""
    if a.rank < 1 or not (0 <= i < a.shape[0]):
        raise DimensionError(f"slice0 index {i} out of range for shape {a.shape}")
    out = Tensor(a.data[i])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return record_op(out, (a,), vjp)


def slice0_range(a: Tensor, lo: int, hi: int) -> Tensor:
    """Contiguous slice along axis 0, keeping the rank."""
    if a.rank < 1 or not (0 <= lo < hi <= a.shape[0]):
        raise DimensionError(f"slice0_range [{lo}:{hi}] out of range for shape {a.shape}")
    out = Tensor(a.data[lo:hi])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[lo:hi] = g
        return (full,)

    return record_op(out, (a,), vjp)


def hstack(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-2 tensors along columns."""
    if not parts:
        raise DimensionError("hstack of zero tensors")
    rows = parts[0].shape[0]
    for p in parts:
        if p.rank != 2 or p.shape[0] != rows:
            raise DimensionError(f"hstack: incompatible shape {p.shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]
    return record_op(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=1)))


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a rank-1 vector as n identical rows -> [n, len(v)]."""
    if v.rank != 1:
        raise DimensionError(f"tile_rows needs rank 1, got {v.shape}")
    out = Tensor(np.tile(v.data, (n, 1)))
    return record_op(out, (v,), lambda g: (g.sum(axis=0),))


def tile_cols(v: Tensor, n: int) -> Tensor:
    """Repeat a rank-1 vector as n identical columns -> [len(v), n]."""
    if v.rank != 1:
        raise DimensionError(f"tile_cols needs rank 1, got {v.shape}")
    out = Tensor(np.tile(v.data[:, None], (1, n)))
    return record_op(out, (v,), lambda g: (g.sum(axis=1),))


# ---------------------------------------------------------------------------
# reductions

def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.data))
    shape = a.shape
    return record_op(out, (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    out = Tensor(np.sum(a.data) / n)
    shape = a.shape
    return record_op(out, (a,), lambda g: (np.full(shape, float(g) / n),))


def sum_axis0(a: Tensor) -> Tensor:
    """Column sums of a rank-2 tensor -> rank-1."""
    if a.rank != 2:
        raise DimensionError(f"sum_axis0 needs rank 2, got {a.shape}")
    out = Tensor(a.data.sum(axis=0))
    rows = a.shape[0]
    return record_op(out, (a,), lambda g: (np.tile(g, (rows, 1)),))


# ---------------------------------------------------------------------------
# numerical checks

def assert_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


def grad_check(f: Callable[[list[Tensor]], Tensor], params: list[Tensor],
               eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(params)`` must rebuild its computation from the current parameter
    values on every call and return a scalar tensor. The numeric side never
    touches the tape, so it stays an independent oracle.
    """
    if not (1e-7 <= eps <= 1e-4):
        raise ParameterError(f"grad_check eps must be in [1e-7, 1e-4], got {eps}")
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f(params)
    if loss.shape != ():
        raise ContractError(f"grad_check target must be scalar, got shape {loss.shape}")
    assert_finite(loss.data, "grad_check loss")
    backward(loss, tape)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(params).item()
            flat[i] = orig - eps
            fm = f(params).item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError("non-finite value during finite differencing")
            numeric = (fp - fm) / (2.0 * eps)
            a = gflat[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
