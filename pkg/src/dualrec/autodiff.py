"""Minimal dense-tensor substrate with tape-based reverse-mode differentiation.

Tensors wrap float64 numpy arrays and are immutable by convention once built;
only the ``grad`` buffer is mutated, and only during :func:`backward`.  Every
op takes the recording tape as its first argument; passing ``tape=None`` runs
the forward computation without recording, which is what evaluation paths use.

Gradients accumulate additively across tape records (the same tensor may feed
several ops), so callers must zero parameter grads between optimizer steps.
There is no implicit broadcasting: the only shape-bending ops are the explicit
ones (`scale`, `add_rowvec`, `reshape`), everything else demands exact shapes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class TapeError(ValueError):
    """Raised when backward is asked to run over an unusable tape."""


class Tensor:
    """Dense float64 array plus an optional gradient buffer of the same shape.

    ``constant=True`` marks tensors that never need gradients (padding masks,
    the all-ones helper, initial hidden states); backward skips accumulating
    into them.
    """

    __slots__ = ("values", "grad", "constant")

    def __init__(self, values, constant: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.constant = constant

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, constant={self.constant})"


BackwardRule = Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of op applications with their local backward rules.

    Replaying the records in reverse propagates the loss gradient to every
    tensor reachable from it.  A tape and the tensors it references belong to
    a single worker; independent tapes may run on independent workers.
    """

    __slots__ = ("_records",)

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], BackwardRule]] = []

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: BackwardRule) -> None:
        self._records.append((out, inputs, rule))

    def __len__(self) -> int:
        return len(self._records)


def _accumulate(tensor: Tensor, grad: np.ndarray | None) -> None:
    if grad is None or tensor.constant:
        return
    if tensor.grad is None:
        # copy: backward rules may hand the same array to several inputs
        tensor.grad = np.array(grad, dtype=np.float64)
    else:
        tensor.grad += grad


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every tensor the scalar ``loss`` depends on."""
    if loss.values.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    if not any(rec[0] is loss for rec in tape._records):
        raise TapeError("loss is not an output recorded on this tape")
    _accumulate(loss, np.ones(()))
    for out, inputs, rule in reversed(tape._records):
        g = out.grad
        if g is None:
            continue
        for tensor, grad in zip(inputs, rule(g)):
            _accumulate(tensor, grad)


def _require_equal_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"{op}: shapes {a.values.shape} and {b.values.shape} differ")


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def sigmoid(tape: Tape | None, a: Tensor) -> Tensor:
    out = Tensor(expit(a.values))
    if tape is not None:
        s = out.values
        tape.record(out, (a,), lambda g: (g * s * (1.0 - s),))
    return out


def tanh(tape: Tape | None, a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.values))
    if tape is not None:
        t = out.values
        tape.record(out, (a,), lambda g: (g * (1.0 - t * t),))
    return out


def relu(tape: Tape | None, a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.values, 0.0))
    if tape is not None:
        mask = (a.values > 0.0).astype(np.float64)
        tape.record(out, (a,), lambda g: (g * mask,))
    return out


def add(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    _require_equal_shapes("add", a, b)
    out = Tensor(a.values + b.values)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g, g))
    return out


def sub(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    _require_equal_shapes("sub", a, b)
    out = Tensor(a.values - b.values)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g, -g))
    return out


def mul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _require_equal_shapes("mul", a, b)
    out = Tensor(a.values * b.values)
    if tape is not None:
        av, bv = a.values, b.values
        tape.record(out, (a, b), lambda g: (g * bv, g * av))
    return out


def scale(tape: Tape | None, a: Tensor, factor: float) -> Tensor:
    """Scalar-times-tensor, the one sanctioned broadcast."""
    c = float(factor)
    out = Tensor(a.values * c)
    if tape is not None:
        tape.record(out, (a,), lambda g: (g * c,))
    return out


def add_rowvec(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Add a length-D vector to every row of a (B, D) matrix (bias add)."""
    if a.values.ndim != 2 or b.values.ndim != 1 or a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"add_rowvec: shapes {a.values.shape} and {b.values.shape} incompatible")
    out = Tensor(a.values + b.values[None, :])
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g, g.sum(axis=0)))
    return out


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def matmul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.values.shape} and {b.values.shape}")
    if a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {a.values.shape} x {b.values.shape} disagree")
    out = Tensor(a.values @ b.values)
    if tape is not None:
        av, bv = a.values, b.values
        tape.record(out, (a, b), lambda g: (g @ bv.T, av.T @ g))
    return out


def transpose(tape: Tape | None, a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D operand, got {a.values.shape}")
    out = Tensor(a.values.T.copy())
    if tape is not None:
        tape.record(out, (a,), lambda g: (g.T,))
    return out


def concat(tape: Tape | None, a: Tensor, b: Tensor, axis: int) -> Tensor:
    if a.values.ndim != b.values.ndim:
        raise ShapeError(f"concat: ranks {a.values.shape} and {b.values.shape} differ")
    for d in range(a.values.ndim):
        if d != axis and a.values.shape[d] != b.values.shape[d]:
            raise ShapeError(f"concat: shapes {a.values.shape} and {b.values.shape} differ off-axis")
    out = Tensor(np.concatenate([a.values, b.values], axis=axis))
    if tape is not None:
        split = a.values.shape[axis]

        def rule(g, split=split, axis=axis):
            ga, gb = np.split(g, [split], axis=axis)
            return ga, gb

        tape.record(out, (a, b), rule)
    return out


def reshape(tape: Tape | None, a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.values.size:
        raise ShapeError(f"reshape: cannot view {a.values.shape} as {shape}")
    out = Tensor(a.values.reshape(shape).copy())
    if tape is not None:
        orig = a.values.shape
        tape.record(out, (a,), lambda g: (g.reshape(orig),))
    return out


def take_rows(tape: Tape | None, matrix: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds into the source."""
    if matrix.values.ndim != 2:
        raise ShapeError(f"take_rows needs a 2-D source, got {matrix.values.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= matrix.values.shape[0]):
        raise IndexError(f"take_rows: id out of range for {matrix.values.shape[0]} rows")
    out = Tensor(matrix.values[ids])
    if tape is not None:
        n_rows = matrix.values.shape[0]
        width = matrix.values.shape[1]

        def rule(g, ids=ids):
            gm = np.zeros((n_rows, width))
            np.add.at(gm, ids.reshape(-1), g.reshape(-1, width))
            return (gm,)

        tape.record(out, (matrix,), rule)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(tape: Tape | None, a: Tensor) -> Tensor:
    out = Tensor(a.values.sum())
    if tape is not None:
        shape = a.values.shape
        tape.record(out, (a,), lambda g: (np.full(shape, g),))
    return out


def rowsum(tape: Tape | None, a: Tensor) -> Tensor:
    """Sum a (B, D) matrix along rows into a (B, 1) column."""
    if a.values.ndim != 2:
        raise ShapeError(f"rowsum needs a 2-D operand, got {a.values.shape}")
    out = Tensor(a.values.sum(axis=1, keepdims=True))
    if tape is not None:
        shape = a.values.shape
        tape.record(out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    return out


def squared_l2(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Sum of squared differences over all entries, as a scalar tensor."""
    _require_equal_shapes("squared_l2", a, b)
    d = a.values - b.values
    out = Tensor((d * d).sum())
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g * 2.0 * d, g * -2.0 * d))
    return out
