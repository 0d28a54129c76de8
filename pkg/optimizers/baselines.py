"""
Handcrafted Riemannian optimizers used as comparison points.

RSGD, RSGD with momentum (momentum moved by projection transport), and a
RASA-like row/column diagonal preconditioner built from the same covariance
diagonals as the learned optimizer. The RASA-like rule is our own
fourth-root variant, not the published algorithm.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from optimizers.subspace import covariance_diagonals
from tools.errors import StateError
from tools.manifolds import ManifoldPoint, project_to_tangent, retract, transport_by_projection

logger = logging.getLogger(__name__)

# Defaults from the published baseline settings.
RSGD_LR = 0.01
RASA_LR = 0.0001
MOMENTUM_BETA = 0.9
RASA_BETA2 = 0.99
RASA_EPS = 1e-8


@dataclass
class BaselineState:
    """Per-parameter accumulators of the stateful baselines."""
    momentum: Optional[np.ndarray] = None
    u_row: Optional[np.ndarray] = None
    u_col: Optional[np.ndarray] = None
    step_count: int = 0

    def check(self, d: int, p: int) -> None:
        if self.momentum is not None and self.momentum.shape != (d, p):
            raise StateError(f"momentum is {self.momentum.shape}, parameter is {(d, p)}")
        if self.u_row is not None and self.u_row.shape != (d,):
            raise StateError(f"row accumulator is {self.u_row.shape}, parameter has {d} rows")
        if self.u_col is not None and self.u_col.shape != (p,):
            raise StateError(f"column accumulator is {self.u_col.shape}, parameter has {p} columns")


def rsgd_step(point: ManifoldPoint, egrad: np.ndarray, alpha: float) -> ManifoldPoint:
    """W' = retract(W, -alpha * pi_W(egrad))."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    G = project_to_tangent(point, egrad).V
    return retract(point, -alpha * G)


def rsgdm_step(point: ManifoldPoint, egrad: np.ndarray, state: BaselineState,
               alpha: float, beta: float) -> tuple[ManifoldPoint, BaselineState]:
    """m' = beta * transport(m) + pi_W(egrad); W' = retract(W, -alpha * m')."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must be in [0, 1), got {beta}")
    d, p = point.kind.d, point.kind.p
    state.check(d, p)
    G = project_to_tangent(point, egrad).V
    if state.momentum is None:
        m = G
    else:
        m = beta * transport_by_projection(point, state.momentum).V + G
    return retract(point, -alpha * m), BaselineState(momentum=m, step_count=state.step_count + 1)


def rasa_like_step(point: ManifoldPoint, egrad: np.ndarray, state: BaselineState,
                   alpha: float, beta2: float, epsilon: float) -> tuple[ManifoldPoint, BaselineState]:
    """Row/column fourth-root diagonal preconditioning with EMA covariance diagonals."""
    if not 0.0 <= beta2 <= 1.0:
        raise ValueError(f"beta2 must be in [0, 1], got {beta2}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    d, p = point.kind.d, point.kind.p
    state.check(d, p)
    G = project_to_tangent(point, egrad).V
    rhat, chat = covariance_diagonals(G)
    u_row = np.zeros(d) if state.u_row is None else state.u_row
    u_col = np.zeros(p) if state.u_col is None else state.u_col
    u_row = beta2 * u_row + (1.0 - beta2) * rhat
    u_col = beta2 * u_col + (1.0 - beta2) * chat
    preconditioned = ((u_row + epsilon) ** -0.25)[:, None] * G * ((u_col + epsilon) ** -0.25)[None, :]
    update = project_to_tangent(point, preconditioned).V
    new_state = BaselineState(u_row=u_row, u_col=u_col, step_count=state.step_count + 1)
    return retract(point, -alpha * update), new_state


# ── Stateful wrappers for evaluation loops ───────────────────────────

class RSGD:
    name = "rsgd"

    def __init__(self, alpha: float = RSGD_LR):
        self.alpha = alpha

    def reset(self) -> None:
        pass

    def step(self, point: ManifoldPoint, egrad: np.ndarray, param_id: str) -> ManifoldPoint:
        return rsgd_step(point, egrad, self.alpha)


class RSGDM:
    name = "rsgdm"

    def __init__(self, alpha: float = RSGD_LR, beta: float = MOMENTUM_BETA):
        self.alpha = alpha
        self.beta = beta
        self.states: dict[str, BaselineState] = {}

    def reset(self) -> None:
        self.states.clear()

    def step(self, point: ManifoldPoint, egrad: np.ndarray, param_id: str) -> ManifoldPoint:
        state = self.states.get(param_id, BaselineState())
        point, self.states[param_id] = rsgdm_step(point, egrad, state, self.alpha, self.beta)
        return point


class RASALike:
    name = "rasa-like"

    def __init__(self, alpha: float = RASA_LR, beta2: float = RASA_BETA2, epsilon: float = RASA_EPS):
        self.alpha = alpha
        self.beta2 = beta2
        self.epsilon = epsilon
        self.states: dict[str, BaselineState] = {}

    def reset(self) -> None:
        self.states.clear()

    def step(self, point: ManifoldPoint, egrad: np.ndarray, param_id: str) -> ManifoldPoint:
        state = self.states.get(param_id, BaselineState())
        point, self.states[param_id] = rasa_like_step(point, egrad, state, self.alpha, self.beta2, self.epsilon)
        return point
