"""Dense/sparse kernels with tape-based reverse-mode differentiation.

Dense matrices are plain 2-D ``float64`` numpy arrays. A :class:`Variable`
wraps one together with a gradient buffer; operations executed while a
:class:`Tape` is active are recorded so that :meth:`Tape.backward` can replay
their backward rules in reverse order.

    >>> w = parameter(np.ones((2, 1)))
    >>> with Tape() as tape:
    ...     loss = sum_all(matmul(constant([[1.0, 2.0]]), w))
    >>> tape.backward(loss)
    >>> w.grad.ravel().tolist()
    [1.0, 2.0]
"""

from __future__ import annotations

import contextvars
import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError, ParameterError, ShapeError

__all__ = [
    "SparseMatrix",
    "Variable",
    "Tape",
    "parameter",
    "constant",
    "backward",
    "matmul",
    "spmm",
    "relu",
    "row_softmax",
    "dropout",
    "sparse_dropout",
    "concat_cols",
    "add",
    "add_row",
    "scale",
    "mul",
    "log",
    "take",
    "sum_all",
    "l2_normalize",
]

_ids = itertools.count()
_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "scrl_active_tape", default=None
)


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {arr.ndim}-D array")
    return arr


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericalError(f"{op} produced non-finite values")
    return arr


# --------------------------------------------------------------------------- #
# Sparse matrices
# --------------------------------------------------------------------------- #


class SparseMatrix:
    """Immutable compressed-row matrix.

    Column indices are strictly increasing within each row and no explicit
    zeros are stored. Products go through a cached ``scipy.sparse`` view of the
    same buffers.
    """

    __slots__ = ("shape", "indptr", "indices", "data", "_csr", "_csr_t")

    def __init__(self, indptr, indices, data, shape, check: bool = True):
        self.shape = (int(shape[0]), int(shape[1]))
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        for a in (self.indptr, self.indices, self.data):
            a.setflags(write=False)
        self._csr = None
        self._csr_t = None
        if check:
            self._validate()

    def _validate(self) -> None:
        rows, cols = self.shape
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative shape {self.shape}")
        if self.indptr.shape != (rows + 1,):
            raise ShapeError("row offsets must have length rows + 1")
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise ShapeError("row offsets must start at 0 and be non-decreasing")
        nnz = int(self.indptr[-1])
        if self.indices.shape != (nnz,) or self.data.shape != (nnz,):
            raise ShapeError("final row offset must equal the number of stored entries")
        if nnz:
            if self.indices.min() < 0 or self.indices.max() >= cols:
                raise ShapeError("column index out of range")
            step = np.diff(self.indices)
            row_start = np.zeros(nnz, dtype=bool)
            row_start[self.indptr[:-1][np.diff(self.indptr) > 0]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ShapeError("column indices must be strictly increasing within a row")
            if np.any(self.data == 0):
                raise ShapeError("explicit zeros must not be stored")
            _finite(self.data, "SparseMatrix")

    @classmethod
    def from_coo(cls, rows, cols, values, shape) -> "SparseMatrix":
        """Build from coordinate triplets; duplicates are summed, zeros dropped."""
        m = sp.coo_matrix(
            (np.asarray(values, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
            shape=shape,
        ).tocsr()
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m.indptr, m.indices, m.data, m.shape)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = _as_matrix(a)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64, copy=True)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m.indptr, m.indices, m.data, m.shape)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(np.arange(n + 1), np.arange(n), np.ones(n), (n, n), check=False)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))

    def degrees(self) -> np.ndarray:
        """Row sums of the stored values."""
        return np.bincount(self.row_ids(), weights=self.data, minlength=self.shape[0])

    def to_scipy(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.data, self.indices, self.indptr), shape=self.shape
            )
        return self._csr

    def _transposed_scipy(self) -> sp.csr_matrix:
        if self._csr_t is None:
            self._csr_t = self.to_scipy().T.tocsr()
        return self._csr_t

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._transposed_scipy())

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        diff = self.to_scipy() - self._transposed_scipy()
        return diff.nnz == 0 or float(np.abs(diff.data).max()) <= tol

    def permute(self, perm) -> "SparseMatrix":
        """Return ``P S P^T`` where row ``i`` of the result is row ``perm[i]`` of ``S``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        coo = self.to_scipy().tocoo()
        return SparseMatrix.from_coo(inv[coo.row], inv[coo.col], coo.data, self.shape)

    def __repr__(self) -> str:
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


# --------------------------------------------------------------------------- #
# Variables and the tape
# --------------------------------------------------------------------------- #


class Variable:
    """A dense matrix value plus an accumulated gradient of the same shape."""

    __slots__ = ("value", "grad", "requires_grad", "id", "_leaf")

    def __init__(self, value, requires_grad: bool = False, _leaf: bool = True):
        self.value = _as_matrix(value)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.value) if self.requires_grad else None
        self.id = next(_ids)
        self._leaf = _leaf

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Variable(shape={self.shape}{flag})"


def parameter(value) -> Variable:
    """A trainable leaf."""
    return Variable(value, requires_grad=True)


def constant(value) -> Variable:
    return Variable(value, requires_grad=False)


@dataclass
class _Record:
    inputs: tuple[Variable, ...]
    output: Variable
    backward: Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; operations on Variables that require gradients
    are recorded while the tape is active. Records are appended in execution
    order, so every record's inputs precede it.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Variable) -> None:
        """Accumulate d(loss)/d(leaf) into every requires-grad leaf's ``grad``."""
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.shape}")
        if not loss.requires_grad:
            return
        if loss._leaf:
            loss.grad += 1.0
            return
        grads: dict[int, np.ndarray] = {loss.id: np.ones((1, 1))}
        found = False
        for rec in reversed(self.records):
            g = grads.pop(rec.output.id, None)
            if g is None:
                continue
            found = True
            for var, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not var.requires_grad:
                    continue
                if var._leaf:
                    var.grad += gi
                elif var.id in grads:
                    grads[var.id] = grads[var.id] + gi
                else:
                    grads[var.id] = gi
        if not found:
            raise ShapeError("loss was not produced on this tape")


def backward(tape: Tape, loss: Variable) -> None:
    tape.backward(loss)


def _emit(value: np.ndarray, inputs: tuple[Variable, ...], rule, op: str) -> Variable:
    _finite(value, op)
    tape = _active_tape.get()
    needs = tape is not None and any(v.requires_grad for v in inputs)
    out = Variable.__new__(Variable)
    out.value = value
    out.requires_grad = needs
    out.grad = None
    out.id = next(_ids)
    out._leaf = not needs
    if needs:
        tape.records.append(_Record(inputs, out, rule))
    return out


# --------------------------------------------------------------------------- #
# Operations
# --------------------------------------------------------------------------- #


def matmul(a: Variable, b: Variable) -> Variable:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def rule(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return _emit(av @ bv, (a, b), rule, "matmul")


def spmm(s: SparseMatrix, d: Variable) -> Variable:
    """Sparse-times-dense product. ``s`` is a constant and receives no gradient."""
    if s.shape[1] != d.shape[0]:
        raise ShapeError(f"spmm: {s.shape} x {d.shape}")
    out = np.asarray(s.to_scipy() @ d.value)

    def rule(g):
        return (np.asarray(s._transposed_scipy() @ g),)

    return _emit(out, (d,), rule, "spmm")


def relu(a: Variable) -> Variable:
    x = a.value

    def rule(g):
        return (g * (x > 0),)

    return _emit(np.maximum(x, 0.0), (a,), rule, "relu")


def row_softmax(a: Variable, tau: float = 1.0) -> Variable:
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    z = (a.value - a.value.max(axis=1, keepdims=True)) / tau
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return ((y * (g - (g * y).sum(axis=1, keepdims=True))) / tau,)

    return _emit(y, (a,), rule, "row_softmax")


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")


def dropout(a: Variable, rate: float, training: bool, rng: np.random.Generator) -> Variable:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` at train time."""
    _check_rate(rate)
    if not training or rate == 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def rule(g):
        return (g * mask,)

    return _emit(a.value * mask, (a,), rule, "dropout")


def sparse_dropout(s: SparseMatrix, rate: float, training: bool,
                   rng: np.random.Generator) -> SparseMatrix:
    """Inverted dropout over the stored entries of a constant sparse matrix."""
    _check_rate(rate)
    if not training or rate == 0.0:
        return s
    keep = rng.random(s.nnz) >= rate
    counts = np.bincount(s.row_ids()[keep], minlength=s.shape[0])
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return SparseMatrix(indptr, s.indices[keep], s.data[keep] / (1.0 - rate), s.shape,
                        check=False)


def concat_cols(a: Variable, b: Variable) -> Variable:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts {a.shape[0]} != {b.shape[0]}")
    p = a.shape[1]

    def rule(g):
        return g[:, :p], g[:, p:]

    return _emit(np.concatenate([a.value, b.value], axis=1), (a, b), rule, "concat_cols")


def add(a: Variable, b: Variable) -> Variable:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _emit(a.value + b.value, (a, b), lambda g: (g, g), "add")


def add_row(a: Variable, bias: Variable) -> Variable:
    """Add a ``1 x n`` row vector to every row of ``a``."""
    if bias.shape != (1, a.shape[1]):
        raise ShapeError(f"add_row: bias {bias.shape} for {a.shape}")

    def rule(g):
        return g, g.sum(axis=0, keepdims=True)

    return _emit(a.value + bias.value, (a, bias), rule, "add_row")


def scale(a: Variable, c: float) -> Variable:
    c = float(c)
    return _emit(a.value * c, (a,), lambda g: (g * c,), "scale")


def mul(a: Variable, w) -> Variable:
    """Elementwise product with a constant array of the same shape."""
    w = _as_matrix(w.value if isinstance(w, Variable) else w)
    if w.shape != a.shape:
        raise ShapeError(f"mul: {a.shape} vs {w.shape}")
    return _emit(a.value * w, (a,), lambda g: (g * w,), "mul")


def log(a: Variable, floor: float = 1e-30) -> Variable:
    """Natural log of ``max(a, floor)``; no gradient where the floor is active."""
    x = a.value
    live = x > floor
    safe = np.where(live, x, 1.0)

    def rule(g):
        return (np.where(live, g / safe, 0.0),)

    return _emit(np.log(np.maximum(x, floor)), (a,), rule, "log")


def take(a: Variable, rows, cols) -> Variable:
    """Gather ``a[rows[i], cols[i]]`` into an ``n x 1`` column."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    shape = a.shape

    def rule(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), g[:, 0])
        return (out,)

    return _emit(a.value[rows, cols][:, None], (a,), rule, "take")


def sum_all(a: Variable) -> Variable:
    shape = a.shape

    def rule(g):
        return (np.full(shape, g[0, 0]),)

    return _emit(np.array([[a.value.sum()]]), (a,), rule, "sum_all")


def l2_normalize(a: Variable, axis: int = 1, eps: float = 1e-12) -> Variable:
    """Scale rows (``axis=1``) or columns (``axis=0``) to unit Euclidean norm."""
    norm = np.maximum(np.sqrt((a.value ** 2).sum(axis=axis, keepdims=True)), eps)
    y = a.value / norm

    def rule(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _emit(y, (a,), rule, "l2_normalize")
