"""
Reverse-mode differentiation over dense float64 matrices.

A Tape records every primitive applied to tracked DenseMatrix values.
`Tape.gradient` walks the records backwards exactly once and accumulates
adjoints into the inputs. Untracked values flow through the same primitives
without being recorded, so one code path serves plain evaluation and
differentiation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Literal, Optional, Sequence

import numpy as np

from tools.errors import DimensionError, NumericError, SingularityError

logger = logging.getLogger(__name__)

Pullback = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# Relative rank threshold for thin_qr: |R_jj| must exceed QR_RANK_TOL * ||A||_F.
QR_RANK_TOL = 1e-12


@dataclass(frozen=True)
class _Node:
    """One record on the tape."""
    op: str
    inputs: tuple[Optional[int], ...]
    shape: tuple[int, int]
    pullback: Optional[Pullback]


class DenseMatrix:
    """An immutable 2-D float64 matrix, optionally tracked by a Tape."""

    __slots__ = ("value", "tape", "node")

    def __init__(self, value, tape: Optional["Tape"] = None, node: Optional[int] = None):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise DimensionError(f"DenseMatrix needs at most 2 dimensions, got {arr.ndim}")
        arr.setflags(write=False)
        self.value = arr
        self.tape = tape
        self.node = node

    @classmethod
    def _wrap(cls, arr: np.ndarray, tape: Optional["Tape"] = None, node: Optional[int] = None) -> "DenseMatrix":
        # Takes ownership of a freshly computed array without copying it.
        out = cls.__new__(cls)
        arr.setflags(write=False)
        out.value = arr
        out.tape = tape
        out.node = node
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Row-major copy of the entries."""
        return self.value.ravel().copy()

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    @property
    def T(self) -> "DenseMatrix":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        """Writable copy of the value."""
        return self.value.copy()

    def item(self) -> float:
        if self.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.value[0, 0])

    def __matmul__(self, other: "DenseMatrix") -> "DenseMatrix":
        return matmul(self, as_matrix(other))

    def __add__(self, other) -> "DenseMatrix":
        return add(self, as_matrix(other))

    def __sub__(self, other) -> "DenseMatrix":
        return sub(self, as_matrix(other))

    def __mul__(self, other) -> "DenseMatrix":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, as_matrix(other))

    __rmul__ = __mul__

    def __neg__(self) -> "DenseMatrix":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        flag = f", node={self.node}" if self.tracked else ""
        return f"DenseMatrix(shape={self.shape}{flag})"


class Tape:
    """Ordered record of primitives applied to tracked matrices.

    A tape is confined to one thread while recording and replaying.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self.leaves: list[int] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def variable(self, value) -> DenseMatrix:
        """Register a differentiable leaf."""
        m = as_matrix(value)
        node = len(self._nodes)
        self._nodes.append(_Node("leaf", (), m.shape, None))
        self.leaves.append(node)
        return DenseMatrix._wrap(m.value.copy(), self, node)

    def record(self, op: str, inputs: Sequence[DenseMatrix], value: np.ndarray, pullback: Pullback) -> DenseMatrix:
        ids = tuple(x.node if x.tape is self else None for x in inputs)
        node = len(self._nodes)
        self._nodes.append(_Node(op, ids, value.shape, pullback))
        return DenseMatrix._wrap(value, self, node)

    def gradient(self, output: DenseMatrix, wrt: Sequence[DenseMatrix]) -> list[np.ndarray]:
        """d(output)/d(wrt) for a 1x1 output; untracked outputs give zeros."""
        if output.shape != (1, 1):
            raise DimensionError(f"gradient needs a scalar (1x1) output, got {output.shape}")
        for w in wrt:
            if w.tape is not self:
                raise ValueError("gradient requested for a matrix that is not on this tape")
        if output.tape is not self:
            return [np.zeros(w.shape) for w in wrt]

        adjoints: list[Optional[np.ndarray]] = [None] * len(self._nodes)
        adjoints[output.node] = np.ones((1, 1))
        for idx in range(output.node, -1, -1):
            g = adjoints[idx]
            node = self._nodes[idx]
            if g is None or node.pullback is None:
                continue
            parts = node.pullback(g)
            for inp, part in zip(node.inputs, parts):
                if inp is None or part is None:
                    continue
                acc = adjoints[inp]
                if acc is None:
                    adjoints[inp] = np.zeros(self._nodes[inp].shape)
                    acc = adjoints[inp]
                np.add(acc, part, out=acc)
        return [adjoints[w.node] if adjoints[w.node] is not None else np.zeros(w.shape) for w in wrt]


# ── Construction helpers ─────────────────────────────────────────────

def as_matrix(value) -> DenseMatrix:
    if isinstance(value, DenseMatrix):
        return value
    return DenseMatrix(value)


def constant(value) -> DenseMatrix:
    """An untracked matrix."""
    return DenseMatrix(value)


def ones(rows: int, cols: int) -> DenseMatrix:
    return DenseMatrix._wrap(np.ones((rows, cols)))


def _tape_of(inputs: Iterable[DenseMatrix]) -> Optional[Tape]:
    tape = None
    for x in inputs:
        if x.tape is None:
            continue
        if tape is None:
            tape = x.tape
        elif x.tape is not tape:
            raise ValueError("operands are tracked by different tapes")
    return tape


def _emit(op: str, inputs: Sequence[DenseMatrix], value: np.ndarray, pullback: Pullback) -> DenseMatrix:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{op} produced non-finite values")
    tape = _tape_of(inputs)
    if tape is None:
        return DenseMatrix._wrap(value)
    return tape.record(op, inputs, value, pullback)


def _same_shape(op: str, a: DenseMatrix, b: DenseMatrix) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ── Primitives ───────────────────────────────────────────────────────

def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _emit("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def transpose(a: DenseMatrix) -> DenseMatrix:
    return _emit("transpose", (a,), a.value.T.copy(), lambda g: (g.T,))


def add(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.value + b.value, lambda g: (g, g))


def sub(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.value - b.value, lambda g: (g, -g))


def mul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _emit("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(a: DenseMatrix, factor: float) -> DenseMatrix:
    factor = float(factor)
    return _emit("scale", (a,), a.value * factor, lambda g: (g * factor,))


def sigmoid(a: DenseMatrix) -> DenseMatrix:
    # tanh form avoids exp overflow for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _emit("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def tanh(a: DenseMatrix) -> DenseMatrix:
    y = np.tanh(a.value)
    return _emit("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def square(a: DenseMatrix) -> DenseMatrix:
    av = a.value
    return _emit("square", (a,), av * av, lambda g: (2.0 * g * av,))


ElementwiseKind = Literal["sigmoid", "tanh", "square", "mul", "add", "sub", "scale"]


def elementwise(kind: ElementwiseKind, *operands, factor: float = 1.0) -> DenseMatrix:
    """Dispatch an entrywise primitive by name."""
    unary = {"sigmoid": sigmoid, "tanh": tanh, "square": square}
    binary = {"mul": mul, "add": add, "sub": sub}
    if kind in unary:
        (a,) = operands
        return unary[kind](as_matrix(a))
    if kind in binary:
        a, b = operands
        return binary[kind](as_matrix(a), as_matrix(b))
    if kind == "scale":
        (a,) = operands
        return scale(as_matrix(a), factor)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def scale_rows(a: DenseMatrix, r: DenseMatrix) -> DenseMatrix:
    """diag(r) @ a with r a (rows x 1) column."""
    if r.shape != (a.rows, 1):
        raise DimensionError(f"scale_rows: need ({a.rows}, 1) scales, got {r.shape}")
    av, rv = a.value, r.value
    return _emit(
        "scale_rows", (a, r), rv * av,
        lambda g: (g * rv, np.sum(g * av, axis=1, keepdims=True)),
    )


def scale_cols(a: DenseMatrix, c: DenseMatrix) -> DenseMatrix:
    """a @ diag(c) with c a (cols x 1) column."""
    if c.shape != (a.cols, 1):
        raise DimensionError(f"scale_cols: need ({a.cols}, 1) scales, got {c.shape}")
    av, cv = a.value, c.value
    return _emit(
        "scale_cols", (a, c), av * cv.T,
        lambda g: (g * cv.T, np.sum(g * av, axis=0).reshape(-1, 1)),
    )


def column_block(a: DenseMatrix, start: int, stop: int) -> DenseMatrix:
    if not 0 <= start < stop <= a.cols:
        raise DimensionError(f"column_block: [{start}:{stop}] outside {a.cols} columns")
    shape = a.shape

    def pullback(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _emit("column_block", (a,), a.value[:, start:stop].copy(), pullback)


def reshape(a: DenseMatrix, rows: int, cols: int) -> DenseMatrix:
    """Row-major reshape."""
    if rows * cols != a.rows * a.cols:
        raise DimensionError(f"reshape: {a.shape} -> ({rows}, {cols})")
    shape = a.shape
    return _emit("reshape", (a,), a.value.reshape(rows, cols).copy(), lambda g: (g.reshape(shape),))


def sum_all(a: DenseMatrix) -> DenseMatrix:
    shape = a.shape
    return _emit("sum", (a,), np.array([[a.value.sum()]]), lambda g: (np.full(shape, g[0, 0]),))


def logsumexp_rows(a: DenseMatrix) -> DenseMatrix:
    """Row-wise log(sum(exp(a))) as an (rows x 1) column."""
    av = a.value
    peak = av.max(axis=1, keepdims=True)
    shifted = np.exp(av - peak)
    total = shifted.sum(axis=1, keepdims=True)
    softmax = shifted / total
    return _emit("logsumexp_rows", (a,), peak + np.log(total), lambda g: (softmax * g,))


def stop_gradient(a: DenseMatrix) -> DenseMatrix:
    """Same value, cut from every ancestor."""
    return DenseMatrix._wrap(a.value.copy())


def thin_qr(a: DenseMatrix) -> tuple[DenseMatrix, DenseMatrix]:
    """Reduced QR with a strictly positive R diagonal.

    Only Q is differentiable; R is returned untracked.
    """
    m, n = a.shape
    if m < n:
        raise DimensionError(f"thin_qr needs rows >= cols, got {a.shape}")
    q, r = np.linalg.qr(a.value, mode="reduced")
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    q = q * signs
    r = r * signs[:, None]

    threshold = QR_RANK_TOL * np.linalg.norm(a.value)
    deficient = np.flatnonzero(np.diag(r) <= threshold)
    if deficient.size:
        col = int(deficient[0])
        raise SingularityError(f"thin_qr: matrix is rank deficient at column {col}", column=col)

    def pullback(g):
        # A-bar = [Q-bar + Q copyltu(M)] R^{-T}, M = -Q-bar^T Q (R-bar = 0)
        mm = -(g.T @ q)
        copyltu = np.tril(mm) + np.tril(mm, -1).T
        b = g + q @ copyltu
        return (np.linalg.solve(r, b.T).T,)

    return _emit("thin_qr", (a,), q, pullback), DenseMatrix._wrap(r)
