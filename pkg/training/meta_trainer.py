"""
Bi-level training of the subspace optimizer.

Inner loop: the current optimizer updates every Riemannian parameter for T
steps. Outer loop: phi descends J = sum_t L(theta^(t+1)) with Adam (or plain
gradient steps).

Meta-gradients use per-step truncation: inside step t the incoming point,
its Euclidean gradient and the incoming coordinate states are constants, and
only the path phi -> recurrent cells -> refined gradient -> projection ->
retraction -> loss is differentiated. Each step gets its own tape.

Post-update losses are scored on the step's minibatch by default, or on the
whole dataset with `objective_data = full`.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from models.schemas import (
    AdaptationMode,
    Family,
    InnerStepLog,
    MetaConfig,
    ObjectiveData,
    OuterStepLog,
    TrajectoryRecord,
)
from optimizers.subspace import CoordinateState, OptimizerParams, ParamState, optimizer_step, step_graph
from tools.autodiff import DenseMatrix, Tape, add, constant, scale
from tools.errors import ConfigError, DivergenceError, NumericError
from tools.manifolds import ManifoldPoint, feasibility_violation, random_point
from tools.tasks import Batch, BatchStream, Task, build_task
from training.checkpoint import Checkpoint

logger = logging.getLogger(__name__)


@dataclass
class StepRecord:
    """What a truncated step needs to be replayed: all of it is held constant."""
    inner_step: int
    param_id: str
    family: Family
    W: np.ndarray
    egrad: np.ndarray
    slot: ParamState
    batch: Batch  # gradient
    target: Batch  # post-update loss


@dataclass
class InnerResult:
    theta: dict[str, ManifoldPoint]
    record: TrajectoryRecord
    steps: list[StepRecord]
    grads: Optional[dict[str, np.ndarray]] = None


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: OptimizerParams) -> "AdamState":
        arrays = params.named_arrays()
        return cls(m={k: np.zeros_like(a) for k, a in arrays.items()},
                   v={k: np.zeros_like(a) for k, a in arrays.items()})


@dataclass
class TrainResult:
    params: OptimizerParams
    adam: AdamState
    trajectory: TrajectoryRecord
    config: MetaConfig
    outer_completed: int = 0

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            hidden_size=self.params.hidden_size,
            num_layers=self.params.num_layers,
            seed=self.config.seed,
            adam_t=self.adam.t,
            params=self.params,
            adam_m=self.adam.m,
            adam_v=self.adam.v,
        )


# ── Inner loop ───────────────────────────────────────────────────────

def _check_theta(theta: dict[str, ManifoldPoint], tasks: dict[str, Task]) -> None:
    if set(theta) != set(tasks):
        raise ConfigError(f"parameters {sorted(theta)} do not match tasks {sorted(tasks)}")
    for pid, point in theta.items():
        if point.kind != tasks[pid].manifold:
            raise ConfigError(f"{pid}: point is {point.kind.label}, task expects {tasks[pid].manifold.label}")


def _grad_names(params: OptimizerParams) -> list[tuple[str, tuple[int, ...]]]:
    return [(name, arr.shape) for name, arr in params.named_arrays().items()]


def _step_gradient(params: OptimizerParams, step: list[StepRecord], tasks: dict[str, Task],
                   mode: AdaptationMode, loss_scale: float) -> list[np.ndarray]:
    tape = Tape()
    net_r, net_c = params.bind(tape)
    total = _replay(net_r, net_c, step, tasks, mode)
    total = scale(total, loss_scale)
    leaves = list(net_r.leaves()) + list(net_c.leaves())
    return tape.gradient(total, leaves)


def _replay(net_r, net_c, step: list[StepRecord], tasks: dict[str, Task], mode: AdaptationMode) -> DenseMatrix:
    total: Optional[DenseMatrix] = None
    for rec in step:
        W_new, _ = step_graph(net_r, net_c, rec.family, constant(rec.W), constant(rec.egrad), rec.slot, mode)
        loss = tasks[rec.param_id].loss_graph(W_new, rec.target)
        total = loss if total is None else add(total, loss)
    return total


def inner_loop(params: OptimizerParams, theta: dict[str, ManifoldPoint], tasks: dict[str, Task],
               streams: dict[str, BatchStream], T: int, state: Optional[CoordinateState] = None,
               mode: AdaptationMode = "full", outer_step: int = 0, record_timing: bool = False,
               with_grad: bool = False, loss_scale: float = 1.0,
               objective: ObjectiveData = "batch") -> InnerResult:
    """Apply the optimizer T times to every parameter, logging post-update losses.

    Losses are measured on the step's own minibatch, or on the whole dataset
    when `objective` is "full".
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if objective not in ("batch", "full"):
        raise ConfigError(f"objective must be batch or full, got {objective!r}")
    _check_theta(theta, tasks)
    if state is None:
        state = CoordinateState(params.hidden_size, params.num_layers)
    theta = dict(theta)
    record = TrajectoryRecord()
    steps: list[StepRecord] = []
    names = _grad_names(params)
    grads = {name: np.zeros(shape) for name, shape in names} if with_grad else None

    for t in range(T):
        step: list[StepRecord] = []
        step_loss = 0.0
        for pid, task in tasks.items():
            started = time.perf_counter()
            point = theta[pid]
            batch = streams[pid].next()
            target = batch if objective == "batch" else streams[pid].full()
            _, egrad = task.loss_grad(point, batch)
            slot = state.slot(pid, point.kind.d, point.kind.p).copy()
            step.append(StepRecord(t, pid, point.kind.family, point.W, egrad, slot, batch, target))
            point, state = optimizer_step(params, point, egrad, state, pid, mode)
            loss, _ = task.loss_grad(point, target)
            if not math.isfinite(loss):
                raise NumericError(f"{pid}: loss became {loss} at inner step {t + 1}", step=t + 1)
            theta[pid] = point
            step_loss += loss
            wall_ms = (time.perf_counter() - started) * 1000.0 if record_timing else 0.0
            record.inner.append(InnerStepLog(
                outer_step=outer_step, inner_step=t + 1, param_id=pid, loss=loss,
                feasibility=feasibility_violation(point), wall_ms=wall_ms,
            ))
        record.step_losses.append(step_loss)
        if with_grad:
            for (name, shape), g in zip(names, _step_gradient(params, step, tasks, mode, loss_scale)):
                grads[name] += g.reshape(shape)
        steps.extend(step)
        logger.debug("inner step %d/%d loss=%.6g", t + 1, T, step_loss)

    return InnerResult(theta=theta, record=record, steps=steps, grads=grads)


def meta_objective(record: TrajectoryRecord) -> float:
    """J = sum of the post-update losses."""
    return float(sum(record.step_losses))


def meta_gradient(params: OptimizerParams, theta: dict[str, ManifoldPoint], tasks: dict[str, Task],
                  streams: dict[str, BatchStream], T: int, mode: AdaptationMode = "full",
                  loss_scale: float = 1.0, **kwargs) -> tuple[dict[str, np.ndarray], InnerResult]:
    """dJ/dphi under per-step truncation, keyed like OptimizerParams.named_arrays()."""
    result = inner_loop(params, theta, tasks, streams, T, mode=mode, with_grad=True,
                        loss_scale=loss_scale, **kwargs)
    for name, g in result.grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"meta-gradient of {name} is not finite")
    return result.grads, result


def truncated_objective(params: OptimizerParams, steps: list[StepRecord], tasks: dict[str, Task],
                        mode: AdaptationMode = "full", loss_scale: float = 1.0) -> float:
    """Replay recorded steps with `params`: the objective meta_gradient differentiates."""
    net_r, net_c = params.bind()
    by_step: dict[int, list[StepRecord]] = {}
    for rec in steps:
        by_step.setdefault(rec.inner_step, []).append(rec)
    return loss_scale * sum(_replay(net_r, net_c, group, tasks, mode).item() for group in by_step.values())


def grad_norm(grads: dict[str, np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


# ── Outer update ─────────────────────────────────────────────────────

def adam_update(phi: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
                lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bias-corrected Adam; returns new (phi, m, v) without touching the inputs."""
    if t < 1:
        raise ValueError(f"Adam step counter must be >= 1, got {t}")
    m_new = beta1 * m + (1.0 - beta1) * grad
    v_new = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m_new / (1.0 - beta1 ** t)
    v_hat = v_new / (1.0 - beta2 ** t)
    return phi - lr * m_hat / (np.sqrt(v_hat) + eps), m_new, v_new


def outer_update(params: OptimizerParams, grads: dict[str, np.ndarray], adam: AdamState,
                 config: MetaConfig) -> tuple[OptimizerParams, AdamState]:
    t = adam.t + 1
    arrays = params.named_arrays()
    updated, m, v = {}, dict(adam.m), dict(adam.v)
    for name, phi in arrays.items():
        if config.outer_optimizer == "sgd":
            updated[name] = phi - config.outer_lr * grads[name]
            continue
        updated[name], m[name], v[name] = adam_update(
            phi, grads[name], adam.m[name], adam.v[name], t,
            config.outer_lr, config.adam_beta1, config.adam_beta2, config.adam_eps,
        )
    return params.with_arrays(updated), AdamState(m=m, v=v, t=t)


# ── Training ─────────────────────────────────────────────────────────

def build_tasks(config: MetaConfig, data_seed: int) -> dict[str, Task]:
    """One task per shape; shape j draws its data from seed (data_seed, j)."""
    return {
        shape.param_id: build_task(config.task_spec(shape, data_seed=data_seed * 1000 + j))
        for j, shape in enumerate(config.shapes)
    }


def sample_theta(tasks: dict[str, Task], seed: int, draw: int) -> dict[str, ManifoldPoint]:
    return {pid: random_point(task.manifold, [seed, draw, j]) for j, (pid, task) in enumerate(tasks.items())}


def make_streams(tasks: dict[str, Task], batch_size: int, seed: int, draw: int) -> dict[str, BatchStream]:
    return {pid: BatchStream(task.data, batch_size, [seed, draw, j]) for j, (pid, task) in enumerate(tasks.items())}


def train(config: MetaConfig, on_outer_step: Optional[Callable[[OuterStepLog], None]] = None) -> TrainResult:
    """Run the outer loop: reset states, unroll, differentiate, update phi."""
    params = OptimizerParams.initialize(config.hidden_size, config.num_layers, config.seed,
                                        config.init, config.init_scale)
    adam = AdamState.zeros_like(params)
    tasks = build_tasks(config, config.seed)
    trajectory = TrajectoryRecord()
    theta: Optional[dict[str, ManifoldPoint]] = None
    logger.info("training %d params on %s for %d outer steps",
                params.scalar_count(), ",".join(tasks), config.outer_steps)

    for k in range(1, config.outer_steps + 1):
        if theta is None or not config.persist_theta:
            theta = sample_theta(tasks, config.seed, k)
        streams = make_streams(tasks, config.batch_size, config.seed, k)
        try:
            grads, inner = meta_gradient(params, theta, tasks, streams, config.inner_steps, mode=config.mode,
                                         outer_step=k, record_timing=config.record_timing,
                                         objective=config.objective_data)
        except NumericError as e:
            raise DivergenceError(f"outer step {k}: {e}", last_good_step=k - 1) from e
        J = meta_objective(inner.record)
        if not math.isfinite(J):
            raise DivergenceError(f"meta-objective became {J} at outer step {k}", last_good_step=k - 1)

        norm = grad_norm(grads)
        params, adam = outer_update(params, grads, adam, config)
        theta = inner.theta
        log = OuterStepLog(outer_step=k, meta_objective=J, grad_norm=norm)
        trajectory.extend(inner.record)
        trajectory.outer.append(log)
        logger.info("outer %d/%d J=%.6g |dJ|=%.3g", k, config.outer_steps, J, norm)
        if on_outer_step is not None:
            on_outer_step(log)

    return TrainResult(params=params, adam=adam, trajectory=trajectory, config=config,
                       outer_completed=config.outer_steps)


TRAJECTORY_HEADER = ("outer_step", "inner_step", "param_id", "loss", "feasibility", "wall_ms")
META_HEADER = ("outer_step", "meta_objective", "grad_norm")


def trajectory_rows(record: TrajectoryRecord) -> list[tuple]:
    return [(r.outer_step, r.inner_step, r.param_id, r.loss, r.feasibility, r.wall_ms) for r in record.inner]


def meta_rows(record: TrajectoryRecord) -> list[tuple]:
    return [(r.outer_step, r.meta_objective, r.grad_norm) for r in record.outer]
