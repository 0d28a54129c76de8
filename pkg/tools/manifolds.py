"""
Stiefel and Grassmann manifold operations.

Points are orthonormal d x p matrices (for Grassmann, one representative of
the subspace). The matrix-level helpers (`tangent_projection`, `retraction`)
work on DenseMatrix values and are differentiable on a tape; the
point-level functions wrap them for plain use.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from models.schemas import Family, ManifoldKind
from tools.autodiff import DenseMatrix, add, as_matrix, matmul, scale, sub, thin_qr, transpose
from tools.errors import DimensionError, FeasibilityError, SingularityError

logger = logging.getLogger(__name__)

# ||W^T W - I||_F allowed after a retraction.
FEASIBILITY_TOL = 1e-8

ArrayLike = Union[np.ndarray, DenseMatrix]


@dataclass(frozen=True)
class ManifoldPoint:
    """A point W on `kind`."""
    kind: ManifoldKind
    W: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "W", np.array(self.W, dtype=np.float64))
        if self.W.shape != (self.kind.d, self.kind.p):
            raise DimensionError(f"{self.kind.label} point needs shape {(self.kind.d, self.kind.p)}, got {self.W.shape}")
        self.W.setflags(write=False)


@dataclass(frozen=True)
class TangentVector:
    """V in the tangent space at `at`."""
    at: ManifoldPoint
    V: np.ndarray


def _check_shape(kind: ManifoldKind, X: DenseMatrix) -> None:
    if X.shape != (kind.d, kind.p):
        raise DimensionError(f"{kind.label}: expected {(kind.d, kind.p)}, got {X.shape}")


def tangent_projection(family: Family, W: DenseMatrix, X: DenseMatrix) -> DenseMatrix:
    """pi_W(X) on DenseMatrix values (tape-aware)."""
    WtX = matmul(transpose(W), X)
    if family == "stiefel":
        sym = scale(add(WtX, transpose(WtX)), 0.5)
        return sub(X, matmul(W, sym))
    return sub(X, matmul(W, WtX))


def retraction(W: DenseMatrix, V: DenseMatrix) -> DenseMatrix:
    """Q-factor of W + V (tape-aware). An untracked zero V returns W itself."""
    if not V.tracked and not np.any(V.value):
        return W
    Q, _ = thin_qr(add(W, V))
    return Q


def project_to_tangent(point: ManifoldPoint, X: ArrayLike) -> TangentVector:
    X = as_matrix(X)
    _check_shape(point.kind, X)
    V = tangent_projection(point.kind.family, DenseMatrix._wrap(point.W.copy()), X)
    return TangentVector(at=point, V=V.numpy())


def retract(point: ManifoldPoint, v: Union[TangentVector, ArrayLike]) -> ManifoldPoint:
    V = as_matrix(v.V if isinstance(v, TangentVector) else v)
    _check_shape(point.kind, V)
    W_new = retraction(DenseMatrix._wrap(point.W.copy()), V).numpy()
    violation = _violation(W_new)
    if violation > FEASIBILITY_TOL:
        raise FeasibilityError(f"retraction left {point.kind.label} by {violation:.3e}")
    return ManifoldPoint(kind=point.kind, W=W_new)


def transport_by_projection(target: ManifoldPoint, V: ArrayLike) -> TangentVector:
    """Move V into the tangent space at `target` by orthogonal projection."""
    return project_to_tangent(target, V)


def random_point(kind: ManifoldKind, seed: int) -> ManifoldPoint:
    """Q-factor of a seeded standard-normal d x p draw."""
    rng = np.random.default_rng(seed)
    while True:
        draw = rng.standard_normal((kind.d, kind.p))
        try:
            Q, _ = thin_qr(DenseMatrix._wrap(draw))
        except SingularityError:
            logger.debug("rank-deficient draw for %s, redrawing", kind.label)
            continue
        return ManifoldPoint(kind=kind, W=Q.numpy())


def _violation(W: np.ndarray) -> float:
    return float(np.linalg.norm(W.T @ W - np.eye(W.shape[1])))


def feasibility_violation(point: Union[ManifoldPoint, np.ndarray]) -> float:
    """||W^T W - I||_F."""
    W = point.W if isinstance(point, ManifoldPoint) else np.asarray(point, dtype=np.float64)
    return _violation(W)


def tangency_violation(point: ManifoldPoint, V: np.ndarray) -> float:
    """Distance of V from the tangent condition of the point's family."""
    WtV = point.W.T @ V
    if point.kind.family == "stiefel":
        return float(np.linalg.norm(WtV + WtV.T))
    return float(np.linalg.norm(WtV))
