import math

import numpy as np
import pytest

from models.schemas import ManifoldKind, TaskSpec
from tools.errors import ConfigError, DataError
from tools.gradcheck import central_differences
from tools.manifolds import ManifoldPoint, project_to_tangent, random_point
from tools.tasks import (
    Batch,
    BatchStream,
    ClassifierTask,
    ConstantTask,
    Dataset,
    PCATask,
    build_task,
    classifier_loss_grad,
    optimal_pca_loss,
    pca_loss_grad,
    synth_classification,
    synth_subspace,
)

E1 = np.array([[1.0], [0.0]])


def _point(family, W):
    W = np.asarray(W, dtype=float)
    return ManifoldPoint(kind=ManifoldKind(family=family, d=W.shape[0], p=W.shape[1]), W=W)


def test_pca_zero_loss_inside_span():
    point = _point("grassmann", E1)
    loss, _ = pca_loss_grad(point, Batch(X=np.array([[3.0, 0.0], [-1.0, 0.0]])))
    assert loss == 0.0


def test_pca_orthogonal_sample_is_stationary():
    point = _point("grassmann", E1)
    loss, egrad = pca_loss_grad(point, Batch(X=np.array([[0.0, 1.0]])))
    assert loss == 1.0
    np.testing.assert_array_equal(egrad, np.zeros((2, 1)))


def test_pca_hand_example():
    loss, egrad = pca_loss_grad(_point("grassmann", E1), Batch(X=np.array([[1.0, 1.0]])))
    assert loss == pytest.approx(1.0)
    np.testing.assert_allclose(egrad, [[-2.0], [-2.0]])


def test_pca_feature_mismatch():
    with pytest.raises(ConfigError):
        pca_loss_grad(_point("grassmann", E1), Batch(X=np.ones((3, 4))))


def test_pca_empty_batch():
    with pytest.raises(ConfigError):
        pca_loss_grad(_point("grassmann", E1), Batch(X=np.ones((0, 2))))


def test_pca_loss_is_invariant_under_rotation(rng):
    point = random_point(ManifoldKind(family="grassmann", d=7, p=3), 0)
    O = random_point(ManifoldKind(family="stiefel", d=3, p=3), 1).W
    batch = Batch(X=rng.standard_normal((20, 7)))
    rotated = ManifoldPoint(kind=point.kind, W=point.W @ O)
    assert abs(pca_loss_grad(point, batch)[0] - pca_loss_grad(rotated, batch)[0]) <= 1e-10


def test_pca_gradient_tangent_part_matches_differences(rng):
    point = random_point(ManifoldKind(family="grassmann", d=6, p=2), 3)
    batch = Batch(X=rng.uniform(-1, 1, (9, 6)))

    def ambient(W):
        residual = batch.X - batch.X @ W @ W.T
        return float(np.sum(residual * residual) / 9)

    numeric = central_differences(ambient, point.W, 1e-5)
    _, egrad = pca_loss_grad(point, batch)
    np.testing.assert_allclose(project_to_tangent(point, egrad).V, project_to_tangent(point, numeric).V, atol=1e-8)


def test_classifier_uniform_logits_give_log_k():
    point = _point("stiefel", np.eye(3))
    batch = Batch(X=np.zeros((4, 3)), y=np.array([0, 1, 2, 1]))
    loss, _ = classifier_loss_grad(point, batch)
    assert loss == pytest.approx(math.log(3.0))


def test_classifier_hand_example():
    point = _point("stiefel", np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))
    x = np.array([[0.0, 0.0, 2.0]])
    loss, egrad = classifier_loss_grad(point, Batch(X=x, y=np.array([0])))
    assert loss == pytest.approx(0.6931472, abs=1e-7)
    np.testing.assert_allclose(egrad, x.T @ np.array([[-0.5, 0.5]]))


def test_classifier_gradient_matches_differences(rng):
    point = random_point(ManifoldKind(family="stiefel", d=5, p=3), 4)
    batch = Batch(X=rng.uniform(-1, 1, (7, 5)), y=rng.integers(0, 3, size=7))

    def ambient(W):
        return classifier_loss_grad(ManifoldPoint(kind=point.kind, W=W), batch)[0]

    numeric = central_differences(ambient, point.W, 1e-5)
    _, egrad = classifier_loss_grad(point, batch)
    rel = np.abs(egrad - numeric) / np.maximum(np.maximum(np.abs(egrad), np.abs(numeric)), 1.0)
    assert rel.max() <= 1e-6


def test_classifier_label_out_of_range():
    with pytest.raises(DataError):
        classifier_loss_grad(_point("stiefel", np.eye(2)), Batch(X=np.ones((1, 2)), y=np.array([2])))


def test_synth_subspace_planted_solution():
    data = synth_subspace(8, 3, 50, noise=0.0, seed=5)
    point = ManifoldPoint(kind=ManifoldKind(family="grassmann", d=8, p=3), W=data.planted)
    loss, _ = pca_loss_grad(point, Batch(X=data.X))
    assert loss <= 1e-20
    assert optimal_pca_loss(data.X, 3) <= 1e-12


def test_synth_subspace_is_deterministic():
    a, b = synth_subspace(6, 2, 30, 0.1, seed=9), synth_subspace(6, 2, 30, 0.1, seed=9)
    assert np.array_equal(a.X, b.X) and a.provenance == b.provenance
    assert not np.array_equal(a.X, synth_subspace(6, 2, 30, 0.1, seed=10).X)


def test_synth_subspace_rank_check():
    with pytest.raises(ConfigError):
        synth_subspace(3, 4, 10, 0.1, seed=0)


def test_optimal_pca_loss_is_a_lower_bound():
    data = synth_subspace(10, 3, 80, noise=0.2, seed=2)
    best = optimal_pca_loss(data.X, 3)
    for seed in range(10):
        point = random_point(ManifoldKind(family="grassmann", d=10, p=3), seed)
        assert pca_loss_grad(point, Batch(X=data.X))[0] >= best - 1e-10
    # the top eigenvectors reach the bound
    _, vecs = np.linalg.eigh(data.X.T @ data.X / data.n)
    top = ManifoldPoint(kind=ManifoldKind(family="grassmann", d=10, p=3), W=vecs[:, -3:])
    assert pca_loss_grad(top, Batch(X=data.X))[0] == pytest.approx(best, abs=1e-10)


def test_synth_classification_labels_and_noise():
    data = synth_classification(6, 3, 400, seed=1, label_noise=0.0)
    assert data.y.min() >= 0 and data.y.max() < 3
    np.testing.assert_array_equal(data.y, np.argmax(data.X @ data.planted, axis=1))
    noisy = synth_classification(6, 3, 400, seed=1, label_noise=0.5)
    assert np.mean(noisy.y != data.y) > 0.1


def test_dataset_rejects_nan_and_bad_labels():
    with pytest.raises(DataError):
        Dataset(X=np.array([[np.nan, 1.0]]))
    with pytest.raises(DataError):
        Dataset(X=np.ones((2, 2)), y=np.array([0, 3]), num_classes=3)


def test_dataset_rejects_empty_samples():
    with pytest.raises(DataError, match="no samples"):
        Dataset(X=np.zeros((0, 3)), y=np.zeros(0, dtype=np.int64), num_classes=0)


def test_batch_stream_determinism_and_full_batch():
    data = synth_subspace(4, 2, 20, 0.1, seed=0)
    a, b = BatchStream(data, 5, 3), BatchStream(data, 5, 3)
    for _ in range(3):
        assert np.array_equal(a.next().X, b.next().X)
    assert BatchStream(data, 50, 0).next().X is data.X


def test_build_task_variants():
    pca = build_task(TaskSpec(kind="pca", manifold=ManifoldKind(family="grassmann", d=6, p=2), dataset_size=32))
    clf = build_task(TaskSpec(kind="classifier", manifold=ManifoldKind(family="stiefel", d=6, p=3), dataset_size=32))
    const = build_task(TaskSpec(kind="constant", manifold=ManifoldKind(family="grassmann", d=4, p=2), dataset_size=8))
    assert isinstance(pca, PCATask) and pca.data.n == 32
    assert isinstance(clf, ClassifierTask) and clf.data.num_classes == 3
    assert isinstance(const, ConstantTask)
    loss, egrad = const.loss_grad(random_point(const.manifold, 0), Batch(X=const.data.X))
    assert loss == 1.0 and not egrad.any()


def test_task_spec_checks_family():
    with pytest.raises(ValueError):
        TaskSpec(kind="classifier", manifold=ManifoldKind(family="grassmann", d=4, p=2))
