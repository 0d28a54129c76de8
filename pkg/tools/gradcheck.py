"""
Finite-difference verification of every gradient the package computes.

`grad_check` compares a tape gradient with central differences. The suites
below run it over the autodiff primitives, the QR pullback, the task
gradients and the truncated meta-gradient.
"""

import logging
from typing import Callable

import numpy as np

from models.schemas import GradCheckReport, ManifoldKind, MetaConfig, ShapeSpec
from optimizers.subspace import OptimizerParams
from tools import autodiff as ad
from tools.autodiff import DenseMatrix, Tape, as_matrix, constant
from tools.errors import NumericError
from tools.manifolds import random_point
from tools.tasks import Batch, classifier_loss_grad, classifier_loss_graph, pca_loss_grad, pca_loss_graph
from training.meta_trainer import build_tasks, make_streams, meta_gradient, sample_theta, truncated_objective

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5
INSTANCES = 20
MAX_ROWS, MAX_COLS = 8, 5
REL_FLOOR = 1e-8  # below this both gradients count as zero

ScalarFn = Callable[[DenseMatrix], DenseMatrix]


def _errors(analytic: np.ndarray, numeric: np.ndarray, name: str) -> GradCheckReport:
    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return GradCheckReport(
        name=name,
        max_abs_err=float(abs_err.max(initial=0.0)),
        max_rel_err=float((abs_err / denom).max(initial=0.0)),
        probe_count=int(analytic.size),
    )


def central_differences(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float) -> np.ndarray:
    """(f(x + eps e_k) - f(x - eps e_k)) / 2 eps for every coordinate k."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        saved = x[idx]
        x[idx] = saved + eps
        f_plus = f(x)
        x[idx] = saved - eps
        f_minus = f(x)
        x[idx] = saved
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"non-finite function value while probing coordinate {idx}")
        out[idx] = (f_plus - f_minus) / (2.0 * eps)
    return out


def grad_check(f: ScalarFn, x, eps: float = DEFAULT_EPS, name: str = "") -> GradCheckReport:
    """Tape gradient of the scalar function `f` at `x` against central differences."""
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    x0 = as_matrix(x).numpy()
    tape = Tape()
    leaf = tape.variable(x0)
    out = f(leaf)
    if not np.isfinite(out.item()):
        raise NumericError(f"{name or 'function'} is not finite at the probe point")
    (analytic,) = tape.gradient(out, [leaf])
    numeric = central_differences(lambda v: f(constant(v)).item(), x0, eps)
    return _errors(analytic, numeric, name)


# ── Suites ───────────────────────────────────────────────────────────

def _weighted_sum(y: DenseMatrix, weights: np.ndarray) -> DenseMatrix:
    return ad.sum_all(ad.mul(y, constant(weights)))


def _shape(rng: np.random.Generator) -> tuple[int, int]:
    return int(rng.integers(1, MAX_ROWS + 1)), int(rng.integers(1, MAX_COLS + 1))


def _uniform(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape)


def _primitive_cases(rng: np.random.Generator):
    """Yield (name, f, x) probes, one per differentiable operand of each primitive."""
    m, n = _shape(rng)
    k = int(rng.integers(1, MAX_COLS + 1))
    A, B = _uniform(rng, m, n), _uniform(rng, n, k)
    S, r, c = _uniform(rng, m, n), _uniform(rng, m, 1), _uniform(rng, n, 1)
    Wmk, Wmn, Wnm = _uniform(rng, m, k), _uniform(rng, m, n), _uniform(rng, n, m)
    factor = float(rng.uniform(-2.0, 2.0))
    lo = int(rng.integers(0, n))
    hi = int(rng.integers(lo + 1, n + 1))
    Wblock, Wcol = _uniform(rng, m, hi - lo), _uniform(rng, m, 1)
    Wflat = _uniform(rng, n, m)

    yield "matmul.lhs", lambda x: _weighted_sum(ad.matmul(x, constant(B)), Wmk), A
    yield "matmul.rhs", lambda x: _weighted_sum(ad.matmul(constant(A), x), Wmk), B
    yield "transpose", lambda x: _weighted_sum(ad.transpose(x), Wnm), A
    for kind in ("add", "sub", "mul"):
        yield f"{kind}.lhs", lambda x, kind=kind: _weighted_sum(ad.elementwise(kind, x, constant(S)), Wmn), A
        yield f"{kind}.rhs", lambda x, kind=kind: _weighted_sum(ad.elementwise(kind, constant(S), x), Wmn), A
    for kind in ("sigmoid", "tanh", "square"):
        yield kind, lambda x, kind=kind: _weighted_sum(ad.elementwise(kind, x), Wmn), A
    yield "scale", lambda x: _weighted_sum(ad.scale(x, factor), Wmn), A
    yield "scale_rows.matrix", lambda x: _weighted_sum(ad.scale_rows(x, constant(r)), Wmn), A
    yield "scale_rows.scales", lambda x: _weighted_sum(ad.scale_rows(constant(A), x), Wmn), r
    yield "scale_cols.matrix", lambda x: _weighted_sum(ad.scale_cols(x, constant(c)), Wmn), A
    yield "scale_cols.scales", lambda x: _weighted_sum(ad.scale_cols(constant(A), x), Wmn), c
    yield "column_block", lambda x: _weighted_sum(ad.column_block(x, lo, hi), Wblock), A
    yield "reshape", lambda x: _weighted_sum(ad.reshape(x, n, m), Wflat), A
    yield "sum", lambda x: ad.scale(ad.sum_all(x), factor), A
    yield "logsumexp_rows", lambda x: _weighted_sum(ad.logsumexp_rows(x), Wcol), A


def autodiff_suite(seed: int = 0, instances: int = INSTANCES, eps: float = DEFAULT_EPS) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    per_case: dict[str, list[GradCheckReport]] = {}
    for _ in range(instances):
        for name, f, x in _primitive_cases(rng):
            per_case.setdefault(name, []).append(grad_check(f, x, eps, name))
    return [GradCheckReport.worst(f"autodiff.{name}", reports) for name, reports in per_case.items()]


def _well_conditioned(rng: np.random.Generator, m: int, n: int, limit: float = 50.0) -> np.ndarray:
    while True:
        A = _uniform(rng, m, n)
        if np.linalg.cond(A) < limit:
            return A


def qr_suite(seed: int = 1, instances: int = INSTANCES, eps: float = DEFAULT_EPS) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(instances):
        n = int(rng.integers(1, MAX_COLS + 1))
        m = int(rng.integers(n, MAX_ROWS + 1))
        A = _well_conditioned(rng, m, n)
        weights = _uniform(rng, m, n)
        reports.append(grad_check(lambda x: _weighted_sum(ad.thin_qr(x)[0], weights), A, eps, "qr"))
    return [GradCheckReport.worst("qr.thin_qr", reports)]


def _grassmann_projection(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X - W @ (W.T @ X)


def tasks_suite(seed: int = 2, instances: int = INSTANCES, eps: float = DEFAULT_EPS) -> list[GradCheckReport]:
    """Closed-form and tape task gradients against differences of the ambient loss."""
    rng = np.random.default_rng(seed)
    pca_closed, pca_tape, clf_closed, clf_tape = [], [], [], []
    for i in range(instances):
        d = int(rng.integers(2, MAX_ROWS + 1))
        p = int(rng.integers(1, min(d, MAX_COLS) + 1))
        n = int(rng.integers(1, 12))
        point = random_point(ManifoldKind(family="grassmann", d=d, p=p), [seed, i])
        batch = Batch(X=_uniform(rng, n, d))

        def pca_ambient(W, batch=batch):
            return pca_loss_graph(constant(W), batch).item()

        numeric = central_differences(pca_ambient, point.W, eps)
        _, egrad = pca_loss_grad(point, batch)
        # the closed form drops a normal-space term, so compare tangent parts
        pca_closed.append(_errors(_grassmann_projection(point.W, egrad),
                                  _grassmann_projection(point.W, numeric), "pca"))
        pca_tape.append(grad_check(lambda x, batch=batch: pca_loss_graph(x, batch), point.W, eps, "pca"))

        K = max(p, 2)
        clf_point = random_point(ManifoldKind(family="stiefel", d=d, p=K), [seed, i, 1])
        clf_batch = Batch(X=_uniform(rng, n, d), y=rng.integers(0, K, size=n))
        _, egrad = classifier_loss_grad(clf_point, clf_batch)
        numeric = central_differences(lambda W, b=clf_batch: classifier_loss_graph(constant(W), b).item(),
                                      clf_point.W, eps)
        clf_closed.append(_errors(egrad, numeric, "classifier"))
        clf_tape.append(grad_check(lambda x, b=clf_batch: classifier_loss_graph(x, b), clf_point.W, eps, "classifier"))

    return [
        GradCheckReport.worst("tasks.pca.closed_form", pca_closed),
        GradCheckReport.worst("tasks.pca.tape", pca_tape),
        GradCheckReport.worst("tasks.classifier.closed_form", clf_closed),
        GradCheckReport.worst("tasks.classifier.tape", clf_tape),
    ]


def meta_suite(seed: int = 3, eps: float = DEFAULT_EPS) -> list[GradCheckReport]:
    """Truncated meta-gradient against differences of the same truncated objective."""
    config = MetaConfig(
        shapes=[ShapeSpec(task="pca", d=6, p=3), ShapeSpec(task="classifier", d=6, p=3)],
        inner_steps=2, hidden_size=2, num_layers=1, dataset_size=24, batch_size=8, seed=seed,
    )
    params = OptimizerParams.initialize(config.hidden_size, config.num_layers, seed, init_scale=0.5)
    tasks = build_tasks(config, seed)
    theta = sample_theta(tasks, seed, 1)
    streams = make_streams(tasks, config.batch_size, seed, 1)
    grads, result = meta_gradient(params, theta, tasks, streams, config.inner_steps)

    names = list(params.named_arrays())
    flat = np.concatenate([params.named_arrays()[k].ravel() for k in names])
    shapes = [params.named_arrays()[k].shape for k in names]

    def unflatten(vec: np.ndarray) -> dict[str, np.ndarray]:
        out, offset = {}, 0
        for k, shape in zip(names, shapes):
            size = int(np.prod(shape))
            out[k] = vec[offset:offset + size].reshape(shape)
            offset += size
        return out

    def objective(vec: np.ndarray) -> float:
        return truncated_objective(params.with_arrays(unflatten(vec)), result.steps, tasks)

    numeric = central_differences(objective, flat, eps)
    analytic = np.concatenate([grads[k].ravel() for k in names])
    return [_errors(analytic, numeric, "meta.truncated_gradient")]


SUITES: dict[str, Callable[[], list[GradCheckReport]]] = {
    "autodiff": autodiff_suite,
    "qr": qr_suite,
    "tasks": tasks_suite,
    "meta": meta_suite,
}


def run_suites(only: str | None = None) -> dict[str, list[GradCheckReport]]:
    selected = [only] if only else list(SUITES)
    results = {}
    for name in selected:
        logger.info("running %s gradient checks", name)
        results[name] = SUITES[name]()
    return results
