"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations only record backward rules while a :class:`Tape` is active, so
frozen-weight inference builds no graph::

    with Tape() as tape:
        loss = (w * w).sum()
    tape.backward(loss)
    w.grad  # 2 * w

Broadcasting is deliberately limited to scalar operands and a row-vector bias
added to a matrix; every other shape disagreement raises ShapeMismatch.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse

from ..errors import ConsumedTape, NonScalarLoss, ShapeMismatch

_ACTIVE: list["Tape"] = []
_KINK_LOG: list[list] = []


class Tape:
    """Ordered record of one forward pass."""

    def __init__(self):
        self.records: list[tuple["Tensor", tuple["Tensor", ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], rule: Callable) -> None:
        if self.consumed:
            raise ConsumedTape("cannot record onto a tape after backward")
        self.records.append((out, inputs, rule))

    def backward(self, loss: "Tensor") -> None:
        backward(loss, self)


def _active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


class record_kinks:
    """Collect the sign pattern of every ReLU-type input during a forward pass.

    Finite-difference checks use this to tell when a perturbation crossed a
    kink, where the central difference is not a derivative estimate.
    """

    def __enter__(self) -> list:
        self.log: list = []
        _KINK_LOG.append(self.log)
        return self.log

    def __exit__(self, *exc) -> None:
        _KINK_LOG.remove(self.log)


def _log_kink(x: np.ndarray) -> None:
    if _KINK_LOG:
        _KINK_LOG[-1].append(x > 0)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; divide by a python scalar")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: Optional[int] = None):
        return sum_(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(inputs: Sequence[Tensor]) -> bool:
    return any(t.requires_grad for t in inputs)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    """Wrap an op result, recording `rule(grad_out) -> grads` when taping."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out._tape = None
    out.requires_grad = False
    tape = _active_tape()
    if tape is not None and _needs_grad(inputs):
        out.requires_grad = True
        out._tape = tape
        tape.record(out, inputs, rule)
    return out


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Leaves recorded on the tape but disconnected from the loss receive an
    all-zero gradient. Gradients add onto any existing ``.grad``.
    """
    if loss.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    tape = tape or loss._tape
    if tape is None:
        raise ConsumedTape("loss was not computed under a tape")
    if tape.consumed:
        raise ConsumedTape("tape already consumed by a previous backward")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for out, inputs, rule in reversed(tape.records):
        for t in inputs:
            if t.requires_grad and t._tape is None:
                leaves.setdefault(id(t), t)
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, rule(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        # rules never write into their inputs, so sharing the buffer is safe
        leaf.grad = g if leaf.grad is None else leaf.grad + g
    tape.records.clear()


_DENSE_SCATTER_LIMIT = 1 << 18


def _scatter_add(idx: np.ndarray, values: np.ndarray, num_rows: int) -> np.ndarray:
    """out[idx[i]] += values[i], via a one-hot product (np.add.at is slow)."""
    if values.ndim == 1:
        return np.bincount(idx, weights=values, minlength=num_rows).astype(np.float64)
    flat = values.reshape(len(idx), -1)
    if num_rows * len(idx) <= _DENSE_SCATTER_LIMIT:
        onehot = np.zeros((num_rows, len(idx)))
        onehot[idx, np.arange(len(idx))] = 1.0
        return (onehot @ flat).reshape((num_rows,) + values.shape[1:])
    ones = np.ones(len(idx))
    op = sparse.csr_matrix((ones, (idx, np.arange(len(idx)))), shape=(num_rows, len(idx)))
    return np.asarray(op @ flat).reshape((num_rows,) + values.shape[1:])


# ---------------------------------------------------------------------------
# elementwise


def _shape_error(op: str, a, b) -> ShapeMismatch:
    return ShapeMismatch(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 0:
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum()))
    if a.ndim == 0:
        return _make(a.data + b.data, (a, b), lambda g: (g.sum(), g))
    if a.ndim == 2 and b.shape in ((a.shape[1],), (1, a.shape[1])):
        shape = b.shape
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0).reshape(shape)))
    raise _shape_error("add", a.shape, b.shape)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    if b.ndim == 0:
        return _make(a.data * b.data, (a, b), lambda g: (g * b.data, (g * a.data).sum()))
    if a.ndim == 0:
        return _make(a.data * b.data, (a, b), lambda g: ((g * b.data).sum(), g * a.data))
    raise _shape_error("mul", a.shape, b.shape)


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row i of a matrix by w[i]."""
    if x.ndim != 2 or w.shape != (x.shape[0],):
        raise _shape_error("scale_rows", x.shape, w.shape)
    return _make(
        x.data * w.data[:, None],
        (x, w),
        lambda g: (g * w.data[:, None], (g * x.data).sum(axis=1)),
    )


def relu(x: Tensor) -> Tensor:
    _log_kink(x.data)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    _log_kink(x.data)
    scale = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * scale, (x,), lambda g: (g * scale,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", x.shape, shape) from None
    old = x.shape
    return _make(out, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeMismatch(f"transpose: expected a matrix, got shape {x.shape}")
    return _make(x.data.T, (x,), lambda g: (g.T,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch(
            f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}"
        ) from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def gather_rows(x: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if x.ndim < 1 or (idx.size and (idx.min() < 0 or idx.max() >= x.shape[0])):
        raise ShapeMismatch(f"gather_rows: index out of range for shape {x.shape}")

    return _make(x.data[idx], (x,), lambda g: (_scatter_add(idx, g, x.shape[0]),))


def scatter_add_rows(x: Tensor, indices, num_rows: int) -> Tensor:
    """out[indices[i]] += x[i]; the adjoint of gather_rows."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (x.shape[0],):
        raise _shape_error("scatter_add_rows", x.shape, idx.shape)
    out = _scatter_add(idx, x.data, num_rows)
    return _make(out, (x,), lambda g: (g[idx],))


# ---------------------------------------------------------------------------
# reductions and normalizers


def sum_(x: Tensor, axis: Optional[int] = None) -> Tensor:
    if axis is None:
        shape = x.shape
        return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = x.data.sum(axis=axis)

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(out, (x,), rule)


def mean(x: Tensor) -> Tensor:
    return mul(sum_(x), 1.0 / x.size)


def softmax(x: Tensor, axis: Optional[int] = -1) -> Tensor:
    """Softmax along ``axis`` (all entries when ``axis`` is None)."""
    if axis is None:
        with np.errstate(over="ignore"):
            flat = x.data - x.data.max()
        e = np.exp(flat)
        out = e / e.sum()
        return _make(out, (x,), lambda g: (out * (g - (g * out).sum()),))
    with np.errstate(over="ignore"):
        shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: Optional[int] = None, mask=None) -> Tensor:
    """Log-softmax with optional boolean validity mask.

    Masked entries are excluded from the normalizer, output 0 and receive no
    gradient. A slice with no valid entry yields all zeros.
    """
    data = x.data
    valid = np.ones(data.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if valid.shape != data.shape:
        raise _shape_error("log_softmax", data.shape, valid.shape)
    keep = axis is not None
    masked = np.where(valid, data, -np.inf)
    with np.errstate(invalid="ignore"):
        peak = masked.max(axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.where(valid, np.exp(np.where(valid, data - peak, 0.0)), 0.0)
    total = e.sum(axis=axis, keepdims=True)
    safe_total = np.where(total > 0, total, 1.0)
    out = np.where(valid, data - peak - np.log(safe_total), 0.0)
    prob = e / safe_total

    def rule(g):
        gm = np.where(valid, g, 0.0)
        s = gm.sum(axis=axis, keepdims=True) if keep else gm.sum()
        return (gm - prob * s,)

    return _make(out, (x,), rule)


def segment_softmax(scores: Tensor, segments, num_segments: int) -> Tensor:
    """Softmax of a score vector within groups sharing a segment id."""
    seg = np.asarray(segments, dtype=np.int64)
    if scores.ndim != 1 or seg.shape != scores.shape:
        raise _shape_error("segment_softmax", scores.shape, seg.shape)
    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, seg, scores.data)
    e = np.exp(scores.data - peak[seg])
    denom = _scatter_add(seg, e, num_segments)
    out = e / denom[seg]

    def rule(g):
        dot = _scatter_add(seg, g * out, num_segments)
        return (out * (g - dot[seg]),)

    return _make(out, (scores,), rule)
