"""
Evaluation tasks: losses, Euclidean gradients and their data.

- PCA on the Grassmann manifold: reconstruction loss (1/n) sum ||x - W W^T x||^2.
- Orthogonal softmax classifier on the Stiefel manifold: mean cross-entropy of W^T x.
- Constant: a loss that ignores W (diagnostic for the meta-gradient).

Every task exposes a plain numpy `loss_grad` and a tape-aware `loss_graph`
that computes the same loss on DenseMatrix values.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from models.schemas import ManifoldKind, TaskSpec
from tools.autodiff import DenseMatrix, constant, logsumexp_rows, matmul, mul, scale, square, sub, sum_all, transpose
from tools.errors import ConfigError, DataError, DimensionError
from tools.manifolds import ManifoldPoint, random_point

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """n x d samples, optional integer labels, and where they came from."""
    X: np.ndarray
    y: Optional[np.ndarray] = None
    provenance: str = ""
    planted: Optional[np.ndarray] = None
    num_classes: Optional[int] = None

    def __post_init__(self):
        if self.X.ndim != 2:
            raise DataError(f"samples must be an n x d matrix, got shape {self.X.shape}")
        if self.X.shape[0] == 0:
            raise DataError("dataset has no samples")
        if not np.all(np.isfinite(self.X)):
            raise DataError("samples contain NaN/Inf")
        if self.y is not None:
            if self.y.shape != (self.X.shape[0],):
                raise DataError(f"{self.y.shape[0]} labels for {self.X.shape[0]} samples")
            if self.num_classes is not None and (self.y.min() < 0 or self.y.max() >= self.num_classes):
                raise DataError(f"labels outside 0..{self.num_classes - 1}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class Batch:
    X: np.ndarray
    y: Optional[np.ndarray] = None


# ── Generators ───────────────────────────────────────────────────────

def synth_subspace(d: int, p_true: int, n: int, noise: float, seed: int) -> Dataset:
    """x_i = U z_i + noise * e_i with a planted orthonormal U (d x p_true)."""
    if not 1 <= p_true <= d:
        raise ConfigError(f"p_true={p_true} must lie in 1..{d}")
    U = random_point(ManifoldKind(family="stiefel", d=d, p=p_true), seed).W
    rng = np.random.default_rng([seed, 1])
    Z = rng.standard_normal((n, p_true))
    E = rng.standard_normal((n, d))
    X = Z @ U.T + noise * E
    return Dataset(X=X, provenance=f"synthetic-subspace seed={seed}", planted=U.copy())


def synth_classification(d: int, num_classes: int, n: int, seed: int, label_noise: float = 0.05) -> Dataset:
    """Labels argmax(W*^T x) of a planted Stiefel W*, a `label_noise` share resampled at random."""
    if num_classes > d:
        raise ConfigError(f"{num_classes} classes need d >= {num_classes}")
    W_star = random_point(ManifoldKind(family="stiefel", d=d, p=num_classes), seed).W
    rng = np.random.default_rng([seed, 2])
    X = rng.standard_normal((n, d))
    y = np.argmax(X @ W_star, axis=1)
    flip = rng.random(n) < label_noise
    y[flip] = rng.integers(0, num_classes, size=int(flip.sum()))
    return Dataset(X=X, y=y.astype(np.int64), provenance=f"synthetic-classifier seed={seed}",
                   planted=W_star.copy(), num_classes=num_classes)


def optimal_pca_loss(X: np.ndarray, p: int) -> float:
    """Smallest achievable reconstruction loss: sum of the d - p smallest eigenvalues of X^T X / n."""
    X = np.asarray(X, dtype=np.float64)
    second_moment = X.T @ X / X.shape[0]
    eigvals = np.linalg.eigvalsh(second_moment)  # ascending
    return float(np.clip(eigvals[: X.shape[1] - p], 0.0, None).sum())


def digest(*blobs: bytes) -> str:
    h = hashlib.sha256()
    for blob in blobs:
        h.update(blob)
    return h.hexdigest()[:16]


class BatchStream:
    """Deterministic minibatches drawn without replacement inside a batch."""

    def __init__(self, data: Dataset, batch_size: int, seed: int):
        self.data = data
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

    def next(self) -> Batch:
        if self.batch_size >= self.data.n:
            return Batch(X=self.data.X, y=self.data.y)
        idx = self.rng.choice(self.data.n, size=self.batch_size, replace=False)
        return Batch(X=self.data.X[idx], y=None if self.data.y is None else self.data.y[idx])

    def full(self) -> Batch:
        return Batch(X=self.data.X, y=self.data.y)


# ── Losses ───────────────────────────────────────────────────────────

def _check_features(W: np.ndarray, X: np.ndarray) -> None:
    if X.shape[0] == 0:
        raise ConfigError("empty batch")
    if X.shape[1] != W.shape[0]:
        raise ConfigError(f"batch has {X.shape[1]} features, parameter has {W.shape[0]} rows")


def pca_loss_grad(point: ManifoldPoint, batch: Batch) -> tuple[float, np.ndarray]:
    """Reconstruction loss and its Euclidean gradient -(2/n) X^T X W (valid on W^T W = I)."""
    W, X = point.W, batch.X
    _check_features(W, X)
    n = X.shape[0]
    XW = X @ W
    residual = X - XW @ W.T
    loss = float(np.sum(residual * residual) / n)
    egrad = -(2.0 / n) * (X.T @ XW)
    return loss, egrad


def pca_loss_graph(W: DenseMatrix, batch: Batch) -> DenseMatrix:
    X = constant(batch.X)
    residual = sub(X, matmul(matmul(X, W), transpose(W)))
    return scale(sum_all(square(residual)), 1.0 / batch.X.shape[0])


def _one_hot(y: np.ndarray, num_classes: int) -> np.ndarray:
    if y is None:
        raise DataError("classifier batch has no labels")
    if y.min() < 0 or y.max() >= num_classes:
        raise DataError(f"label out of range 0..{num_classes - 1}")
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def classifier_loss_grad(point: ManifoldPoint, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy of logits W^T x and its Euclidean gradient."""
    W, X = point.W, batch.X
    _check_features(W, X)
    n, K = X.shape[0], W.shape[1]
    Y = _one_hot(batch.y, K)
    Z = X @ W
    peak = Z.max(axis=1, keepdims=True)
    expz = np.exp(Z - peak)
    total = expz.sum(axis=1, keepdims=True)
    lse = peak + np.log(total)
    loss = float(np.sum(lse[:, 0] - np.sum(Y * Z, axis=1)) / n)
    egrad = X.T @ (expz / total - Y) / n
    return loss, egrad


def classifier_loss_graph(W: DenseMatrix, batch: Batch) -> DenseMatrix:
    n, K = batch.X.shape[0], W.cols
    Y = constant(_one_hot(batch.y, K))
    Z = matmul(constant(batch.X), W)
    total = sub(sum_all(logsumexp_rows(Z)), sum_all(mul(Y, Z)))
    return scale(total, 1.0 / n)


# ── Task objects ─────────────────────────────────────────────────────

class Task(Protocol):
    kind: str
    manifold: ManifoldKind
    data: Dataset

    def loss_grad(self, point: ManifoldPoint, batch: Batch) -> tuple[float, np.ndarray]: ...

    def loss_graph(self, W: DenseMatrix, batch: Batch) -> DenseMatrix: ...


@dataclass
class PCATask:
    manifold: ManifoldKind
    data: Dataset
    kind: str = "pca"

    def loss_grad(self, point, batch):
        return pca_loss_grad(point, batch)

    def loss_graph(self, W, batch):
        return pca_loss_graph(W, batch)

    def optimum(self) -> float:
        return optimal_pca_loss(self.data.X, self.manifold.p)


@dataclass
class ClassifierTask:
    manifold: ManifoldKind
    data: Dataset
    kind: str = "classifier"

    def loss_grad(self, point, batch):
        return classifier_loss_grad(point, batch)

    def loss_graph(self, W, batch):
        return classifier_loss_graph(W, batch)


@dataclass
class ConstantTask:
    """Loss fixed at `value` whatever W is."""
    manifold: ManifoldKind
    data: Dataset
    value: float = 1.0
    kind: str = "constant"

    def loss_grad(self, point, batch):
        return self.value, np.zeros((self.manifold.d, self.manifold.p))

    def loss_graph(self, W, batch):
        return constant([[self.value]])


def build_task(spec: TaskSpec) -> Task:
    """Instantiate a task and its data from a validated TaskSpec."""
    d, p = spec.manifold.d, spec.manifold.p
    if spec.idx_images:
        from tools.idx_parser import load_idx_dataset
        data = load_idx_dataset(spec.idx_images, spec.idx_labels if spec.kind == "classifier" else None)
        if data.d != d:
            raise DimensionError(f"{spec.idx_images} has {data.d} features, shape asks for {d}")
    elif spec.kind == "classifier":
        data = synth_classification(d, p, spec.dataset_size, spec.data_seed, spec.label_noise)
    else:
        data = synth_subspace(d, p, spec.dataset_size, spec.noise, spec.data_seed)

    if spec.kind == "pca":
        return PCATask(manifold=spec.manifold, data=data)
    if spec.kind == "classifier":
        if data.num_classes is not None and data.num_classes != p:
            raise ConfigError(f"classifier has {p} columns but data has {data.num_classes} classes")
        return ClassifierTask(manifold=spec.manifold, data=data)
    return ConstantTask(manifold=spec.manifold, data=data)
