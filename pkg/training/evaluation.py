"""
Held-out evaluation: run one optimizer on fresh seeds and record loss curves.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from models.schemas import MetaConfig, ShapeSpec
from optimizers.baselines import RASA_LR, RSGD_LR, RASALike, RSGD, RSGDM
from optimizers.subspace import OptimizerParams, SubspaceOptimizer
from tools.errors import ConfigError, NumericError
from tools.manifolds import ManifoldPoint, feasibility_violation, random_point
from tools.tasks import BatchStream, PCATask, Task, build_task

logger = logging.getLogger(__name__)

LEARNED = ("learned", "row-only", "col-only", "no-subspace-lstm")
BASELINES = ("rsgd", "rsgdm", "rasa-like")

CURVE_HEADER = ("step", "seed", "loss", "feasibility")
SUMMARY_HEADER = ("shape", "seed", "initial_loss", "final_loss", "oracle_loss")


class Optimizer(Protocol):
    name: str

    def reset(self) -> None: ...

    def step(self, point: ManifoldPoint, egrad: np.ndarray, param_id: str) -> ManifoldPoint: ...


def make_optimizer(name: str, params: Optional[OptimizerParams] = None, alpha: Optional[float] = None,
                   beta: float = 0.9, beta2: float = 0.99, epsilon: float = 1e-8) -> Optimizer:
    if name in LEARNED:
        if params is None:
            raise ConfigError(f"optimizer {name!r} needs a checkpoint")
        return SubspaceOptimizer(params, mode="full" if name == "learned" else name)
    if name == "rsgd":
        return RSGD(alpha=RSGD_LR if alpha is None else alpha)
    if name == "rsgdm":
        return RSGDM(alpha=RSGD_LR if alpha is None else alpha, beta=beta)
    if name == "rasa-like":
        return RASALike(alpha=RASA_LR if alpha is None else alpha, beta2=beta2, epsilon=epsilon)
    raise ConfigError(f"unknown optimizer {name!r} (choose from {', '.join(BASELINES + LEARNED)})")


@dataclass
class CurvePoint:
    step: int
    seed: int
    loss: float
    feasibility: float


@dataclass
class SummaryRow:
    shape: str
    seed: int
    initial_loss: float
    final_loss: float
    oracle_loss: Optional[float]


def run_curve(optimizer: Optimizer, task: Task, point: ManifoldPoint, stream: BatchStream,
              steps: int, seed: int, param_id: str) -> list[CurvePoint]:
    """Loss on the full dataset at step 0 and after each of `steps` minibatch updates."""
    optimizer.reset()
    full = stream.full()
    loss, _ = task.loss_grad(point, full)
    curve = [CurvePoint(0, seed, loss, feasibility_violation(point))]
    for step in range(1, steps + 1):
        _, egrad = task.loss_grad(point, stream.next())
        point = optimizer.step(point, egrad, param_id)
        loss, _ = task.loss_grad(point, full)
        if not np.isfinite(loss):
            raise NumericError(f"{param_id}: loss became {loss} at step {step} (seed {seed})", step=step)
        curve.append(CurvePoint(step, seed, loss, feasibility_violation(point)))
    return curve


def evaluate(optimizer: Optimizer, config: MetaConfig, seeds: list[int],
             steps: int) -> tuple[dict[str, list[CurvePoint]], list[SummaryRow]]:
    """Curves per shape over held-out seeds, plus the per-seed summary."""
    curves: dict[str, list[CurvePoint]] = {}
    summary: list[SummaryRow] = []
    for j, shape in enumerate(config.shapes):
        rows: list[CurvePoint] = []
        for seed in seeds:
            task = build_task(config.task_spec(shape, data_seed=seed * 1000 + j))
            point = random_point(task.manifold, [seed, 0, j])
            stream = BatchStream(task.data, config.batch_size, [seed, 1, j])
            curve = run_curve(optimizer, task, point, stream, steps, seed, shape.param_id)
            rows.extend(curve)
            oracle = task.optimum() if isinstance(task, PCATask) else None
            summary.append(SummaryRow(shape.param_id, seed, curve[0].loss, curve[-1].loss, oracle))
            logger.info("%s %s seed=%d loss %.6g -> %.6g", optimizer.name, shape.param_id, seed,
                        curve[0].loss, curve[-1].loss)
        curves[shape.param_id] = rows
    return curves, summary


def curve_filename(shape: ShapeSpec) -> str:
    return f"eval-{shape.task}-{shape.d}x{shape.p}.csv"
