"""
Learned Riemannian optimizer with row/column subspace adaptation.

Two small coordinate-wise LSTMs (N1 for rows, N2 for columns) read the
diagonals of the row and column covariance matrices of the Riemannian
gradient G and emit the diagonals of R and C. The refined gradient
R @ G @ C is projected back to the tangent space and retracted.
The same weights serve every parameter matrix whatever its (d, p); only the
per-coordinate hidden/cell states depend on the shape.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from models.schemas import AdaptationMode, Family
from tools.autodiff import (
    DenseMatrix,
    Tape,
    add,
    column_block,
    constant,
    matmul,
    mul,
    ones,
    reshape,
    scale,
    scale_cols,
    scale_rows,
    sigmoid,
    tanh,
    transpose,
)
from tools.errors import DimensionError, FeasibilityError, StateError
from tools.manifolds import FEASIBILITY_TOL, ManifoldPoint, feasibility_violation, retraction, tangent_projection

logger = logging.getLogger(__name__)

GATE_ORDER = ("input", "forget", "cell", "output")


def count_parameters(hidden: int, layers: int) -> int:
    """Scalars in both recurrent networks plus their linear heads."""
    if hidden < 1 or layers < 1:
        raise ValueError("hidden and layers must be >= 1")
    per_net = 0
    for layer in range(layers):
        in_size = 1 if layer == 0 else hidden
        per_net += 4 * (hidden * in_size + hidden * hidden + 2 * hidden)
    per_net += hidden + 1
    return 2 * per_net


# ── Parameters ───────────────────────────────────────────────────────

@dataclass
class LayerWeights:
    w_ih: np.ndarray  # (4h, in)
    w_hh: np.ndarray  # (4h, h)
    b_ih: np.ndarray  # (4h,)
    b_hh: np.ndarray  # (4h,)


@dataclass
class RecurrentNetParams:
    """One coordinate-wise LSTM stack and its scalar linear head."""
    layers: list[LayerWeights]
    head_w: np.ndarray  # (h,)
    head_b: np.ndarray  # (1,)

    @property
    def hidden_size(self) -> int:
        return self.head_w.shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def zeros(cls, hidden: int, layers: int) -> "RecurrentNetParams":
        stack = []
        for layer in range(layers):
            in_size = 1 if layer == 0 else hidden
            stack.append(LayerWeights(
                w_ih=np.zeros((4 * hidden, in_size)),
                w_hh=np.zeros((4 * hidden, hidden)),
                b_ih=np.zeros(4 * hidden),
                b_hh=np.zeros(4 * hidden),
            ))
        return cls(layers=stack, head_w=np.zeros(hidden), head_b=np.zeros(1))

    def named_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.l{i}.w_ih"] = layer.w_ih
            out[f"{prefix}.l{i}.w_hh"] = layer.w_hh
            out[f"{prefix}.l{i}.b_ih"] = layer.b_ih
            out[f"{prefix}.l{i}.b_hh"] = layer.b_hh
        out[f"{prefix}.head.w"] = self.head_w
        out[f"{prefix}.head.b"] = self.head_b
        return out

    def bind(self, tape: Optional[Tape] = None) -> "_BoundNet":
        """Lift the weights into DenseMatrix values (tape leaves when a tape is given)."""
        lift = tape.variable if tape is not None else constant
        layers = [
            _BoundLayer(
                w_ih=lift(layer.w_ih),
                w_hh=lift(layer.w_hh),
                b_ih=lift(layer.b_ih.reshape(1, -1)),
                b_hh=lift(layer.b_hh.reshape(1, -1)),
            )
            for layer in self.layers
        ]
        return _BoundNet(
            layers=layers,
            head_w=lift(self.head_w.reshape(-1, 1)),
            head_b=lift(self.head_b.reshape(1, 1)),
            hidden=self.hidden_size,
        )


@dataclass
class OptimizerParams:
    """phi = {phi_1 (rows), phi_2 (columns)}."""
    net_r: RecurrentNetParams
    net_c: RecurrentNetParams
    hidden_size: int = 20
    num_layers: int = 2

    @classmethod
    def zeros(cls, hidden: int = 20, layers: int = 2) -> "OptimizerParams":
        return cls(
            net_r=RecurrentNetParams.zeros(hidden, layers),
            net_c=RecurrentNetParams.zeros(hidden, layers),
            hidden_size=hidden,
            num_layers=layers,
        )

    @classmethod
    def initialize(cls, hidden: int = 20, layers: int = 2, seed: int = 0,
                   init: str = "uniform", init_scale: float = 0.1) -> "OptimizerParams":
        """Weights ~ U[-init_scale, init_scale]; forget-gate input-side bias 1, other biases 0."""
        params = cls.zeros(hidden, layers)
        if init == "zeros":
            return params
        if init != "uniform":
            raise ValueError(f"unknown init {init!r}")
        rng = np.random.default_rng(seed)
        arrays = params.named_arrays()
        for name, arr in arrays.items():
            if name.endswith((".b_ih", ".b_hh", ".head.b")):
                continue
            arr[...] = rng.uniform(-init_scale, init_scale, size=arr.shape)
        for net in (params.net_r, params.net_c):
            for layer in net.layers:
                layer.b_ih[hidden:2 * hidden] = 1.0
        return params

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Live views of every weight array, in a fixed order."""
        out = self.net_r.named_arrays("net_r")
        out.update(self.net_c.named_arrays("net_c"))
        return out

    def scalar_count(self) -> int:
        return sum(arr.size for arr in self.named_arrays().values())

    def copy(self) -> "OptimizerParams":
        return self.with_arrays({k: v.copy() for k, v in self.named_arrays().items()})

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "OptimizerParams":
        """New params of the same architecture holding copies of `arrays`."""
        fresh = OptimizerParams.zeros(self.hidden_size, self.num_layers)
        target = fresh.named_arrays()
        if set(target) != set(arrays):
            missing = sorted(set(target) - set(arrays))
            extra = sorted(set(arrays) - set(target))
            raise KeyError(f"parameter names differ: missing={missing} extra={extra}")
        for name, arr in target.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise DimensionError(f"{name}: expected {arr.shape}, got {src.shape}")
            arr[...] = src
        return fresh

    def bind(self, tape: Optional[Tape] = None) -> tuple["_BoundNet", "_BoundNet"]:
        return self.net_r.bind(tape), self.net_c.bind(tape)


@dataclass
class _BoundLayer:
    w_ih: DenseMatrix
    w_hh: DenseMatrix
    b_ih: DenseMatrix
    b_hh: DenseMatrix


@dataclass
class _BoundNet:
    layers: list[_BoundLayer]
    head_w: DenseMatrix
    head_b: DenseMatrix
    hidden: int

    def leaves(self) -> Iterator[DenseMatrix]:
        """Same order as RecurrentNetParams.named_arrays."""
        for layer in self.layers:
            yield from (layer.w_ih, layer.w_hh, layer.b_ih, layer.b_hh)
        yield self.head_w
        yield self.head_b


# ── Recurrent cell ───────────────────────────────────────────────────

def _split(state: np.ndarray, layers: int, hidden: int) -> list[DenseMatrix]:
    return [constant(state[:, l * hidden:(l + 1) * hidden]) for l in range(layers)]


def _cell(net: _BoundNet, x: DenseMatrix, h: list[DenseMatrix], c: list[DenseMatrix]):
    """Run the stack on n coordinates at once; row k of every operand is coordinate k."""
    H = net.hidden
    ones_col = ones(x.rows, 1)
    inp = x
    h_new, c_new = [], []
    for layer, h_prev, c_prev in zip(net.layers, h, c):
        pre = add(
            add(
                add(matmul(inp, transpose(layer.w_ih)), matmul(ones_col, layer.b_ih)),
                matmul(h_prev, transpose(layer.w_hh)),
            ),
            matmul(ones_col, layer.b_hh),
        )
        i = sigmoid(column_block(pre, 0, H))
        f = sigmoid(column_block(pre, H, 2 * H))
        g = tanh(column_block(pre, 2 * H, 3 * H))
        o = sigmoid(column_block(pre, 3 * H, 4 * H))
        c_l = add(mul(f, c_prev), mul(i, g))
        h_l = mul(o, tanh(c_l))
        h_new.append(h_l)
        c_new.append(c_l)
        inp = h_l
    y = add(matmul(inp, net.head_w), matmul(ones_col, net.head_b))
    return y, h_new, c_new


def _join(parts: list[DenseMatrix]) -> np.ndarray:
    return np.hstack([p.value for p in parts])


def cell_forward(net: RecurrentNetParams, x: float, h: np.ndarray, c: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """One coordinate through the stack. h, c have shape (layers, hidden)."""
    L, H = net.num_layers, net.hidden_size
    h = np.asarray(h, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if h.shape != (L, H) or c.shape != (L, H):
        raise StateError(f"cell state must be {(L, H)}, got {h.shape} / {c.shape}")
    y, h_new, c_new = _cell(
        net.bind(),
        constant([[x]]),
        [constant(h[l:l + 1]) for l in range(L)],
        [constant(c[l:l + 1]) for l in range(L)],
    )
    return y.item(), _join(h_new).reshape(L, H), _join(c_new).reshape(L, H)


# ── Coordinate state ─────────────────────────────────────────────────

@dataclass
class ParamState:
    """Hidden/cell states of every row and column of one parameter matrix."""
    d: int
    p: int
    row_h: np.ndarray
    row_c: np.ndarray
    col_h: np.ndarray
    col_c: np.ndarray
    entry_h: Optional[np.ndarray] = None
    entry_c: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, d: int, p: int, width: int) -> "ParamState":
        return cls(d=d, p=p,
                   row_h=np.zeros((d, width)), row_c=np.zeros((d, width)),
                   col_h=np.zeros((p, width)), col_c=np.zeros((p, width)))

    def copy(self) -> "ParamState":
        return ParamState(
            d=self.d, p=self.p,
            row_h=self.row_h.copy(), row_c=self.row_c.copy(),
            col_h=self.col_h.copy(), col_c=self.col_c.copy(),
            entry_h=None if self.entry_h is None else self.entry_h.copy(),
            entry_c=None if self.entry_c is None else self.entry_c.copy(),
        )


class CoordinateState:
    """Per-parameter coordinate states, zero on first use."""

    def __init__(self, hidden_size: int, num_layers: int):
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.coordinate_forwards = 0
        self._slots: dict[str, ParamState] = {}

    @property
    def width(self) -> int:
        return self.hidden_size * self.num_layers

    def __contains__(self, param_id: str) -> bool:
        return param_id in self._slots

    def slot(self, param_id: str, d: int, p: int) -> ParamState:
        existing = self._slots.get(param_id)
        if existing is None:
            existing = ParamState.zeros(d, p, self.width)
            self._slots[param_id] = existing
            logger.debug("registered coordinate state %s (%d x %d)", param_id, d, p)
        elif (existing.d, existing.p) != (d, p):
            raise StateError(f"{param_id}: state is {(existing.d, existing.p)}, gradient is {(d, p)}")
        return existing

    def put(self, param_id: str, slot: ParamState) -> None:
        self._slots[param_id] = slot

    def reset(self) -> None:
        self._slots.clear()


# ── Adaptation ───────────────────────────────────────────────────────

@dataclass
class AdaptationOutput:
    """Diagonals of R (length d) and C (length p)."""
    rdiag: np.ndarray
    cdiag: np.ndarray


def covariance_diagonals(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """diag(G G^T)/p and diag(G^T G)/d from squared row/column norms."""
    G = np.asarray(G, dtype=np.float64)
    d, p = G.shape
    sq = G * G
    return sq.sum(axis=1) / p, sq.sum(axis=0) / d


def refine_gradient(out: AdaptationOutput, G: np.ndarray) -> np.ndarray:
    """R @ G @ C for diagonal R, C."""
    G = np.asarray(G, dtype=np.float64)
    if out.rdiag.shape != (G.shape[0],) or out.cdiag.shape != (G.shape[1],):
        raise DimensionError(f"diagonals {out.rdiag.shape}/{out.cdiag.shape} do not fit G {G.shape}")
    return (out.rdiag[:, None] * G) * out.cdiag[None, :]


@dataclass
class Refinement:
    """Result of one adaptation on DenseMatrix values."""
    refined: DenseMatrix
    rdiag: DenseMatrix
    cdiag: DenseMatrix
    slot: ParamState
    forwards: int = 0


def refine_graph(net_r: _BoundNet, net_c: _BoundNet, G: DenseMatrix, slot: ParamState,
                 mode: AdaptationMode = "full") -> Refinement:
    """Adapt G with bound networks. Inputs and incoming states are constants."""
    d, p = G.shape
    L, H = len(net_r.layers), net_r.hidden
    new = slot.copy()

    if mode == "no-subspace-lstm":
        if new.entry_h is None:
            new.entry_h = np.zeros((d * p, L * H))
            new.entry_c = np.zeros((d * p, L * H))
        y, h, c = _cell(net_r, reshape(constant(G.value), d * p, 1),
                        _split(new.entry_h, L, H), _split(new.entry_c, L, H))
        new.entry_h, new.entry_c = _join(h), _join(c)
        return Refinement(refined=reshape(y, d, p), rdiag=ones(d, 1), cdiag=ones(p, 1),
                          slot=new, forwards=d * p)

    rhat, chat = covariance_diagonals(G.value)
    forwards = 0
    if mode in ("full", "row-only"):
        rdiag, h, c = _cell(net_r, constant(rhat), _split(new.row_h, L, H), _split(new.row_c, L, H))
        new.row_h, new.row_c = _join(h), _join(c)
        forwards += d
    else:
        rdiag = ones(d, 1)
    if mode in ("full", "col-only"):
        cdiag, h, c = _cell(net_c, constant(chat), _split(new.col_h, L, H), _split(new.col_c, L, H))
        new.col_h, new.col_c = _join(h), _join(c)
        forwards += p
    else:
        cdiag = ones(p, 1)
    refined = scale_cols(scale_rows(G, rdiag), cdiag)
    return Refinement(refined=refined, rdiag=rdiag, cdiag=cdiag, slot=new, forwards=forwards)


def step_graph(net_r: _BoundNet, net_c: _BoundNet, family: Family, W: DenseMatrix, egrad: DenseMatrix,
               slot: ParamState, mode: AdaptationMode = "full") -> tuple[DenseMatrix, Refinement]:
    """W' = retract(W, -pi_W(R pi_W(egrad) C))."""
    G = tangent_projection(family, W, egrad)
    ref = refine_graph(net_r, net_c, G, slot, mode)
    update = tangent_projection(family, W, ref.refined)
    return retraction(W, scale(update, -1.0)), ref


def adapt(params: OptimizerParams, G: np.ndarray, state: CoordinateState, param_id: str,
          mode: AdaptationMode = "full") -> tuple[AdaptationOutput, CoordinateState]:
    """Emit the R, C diagonals for G and advance the coordinate states."""
    G = np.asarray(G, dtype=np.float64)
    d, p = G.shape
    slot = state.slot(param_id, d, p)
    net_r, net_c = params.bind()
    ref = refine_graph(net_r, net_c, constant(G), slot, mode)
    state.put(param_id, ref.slot)
    state.coordinate_forwards += ref.forwards
    return AdaptationOutput(rdiag=ref.rdiag.value[:, 0].copy(), cdiag=ref.cdiag.value[:, 0].copy()), state


def optimizer_step(params: OptimizerParams, point: ManifoldPoint, egrad: np.ndarray, state: CoordinateState,
                   param_id: str, mode: AdaptationMode = "full") -> tuple[ManifoldPoint, CoordinateState]:
    """One learned update of `point`: gradient, adapt, refine, project, retract."""
    kind = point.kind
    egrad = constant(egrad)
    if egrad.shape != (kind.d, kind.p):
        raise DimensionError(f"{kind.label}: egrad shape {egrad.shape}")
    slot = state.slot(param_id, kind.d, kind.p)
    net_r, net_c = params.bind()
    W = constant(point.W)
    W_new, ref = step_graph(net_r, net_c, kind.family, W, egrad, slot, mode)
    state.put(param_id, ref.slot)
    state.coordinate_forwards += ref.forwards
    if W_new is W:
        return point, state
    moved = ManifoldPoint(kind=kind, W=W_new.value)
    violation = feasibility_violation(moved)
    if violation > FEASIBILITY_TOL:
        raise FeasibilityError(f"learned step left {kind.label} by {violation:.3e}")
    return moved, state


class SubspaceOptimizer:
    """Stateful wrapper used by evaluation loops."""

    def __init__(self, params: OptimizerParams, mode: AdaptationMode = "full"):
        self.params = params
        self.mode = mode
        self.state = CoordinateState(params.hidden_size, params.num_layers)

    @property
    def name(self) -> str:
        return "learned" if self.mode == "full" else self.mode

    def reset(self) -> None:
        self.state.reset()

    def step(self, point: ManifoldPoint, egrad: np.ndarray, param_id: str) -> ManifoldPoint:
        point, self.state = optimizer_step(self.params, point, egrad, self.state, param_id, self.mode)
        return point
