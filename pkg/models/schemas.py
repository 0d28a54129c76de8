"""
Pydantic data models for the Subspace Meta-Optimizer.
Defines validated configuration (manifold kinds, tasks, meta-training runs)
and the structured reports written by the CLI.
"""

import math
import re
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


Family = Literal["stiefel", "grassmann"]
TaskKind = Literal["pca", "classifier", "constant"]
AdaptationMode = Literal["full", "row-only", "col-only", "identity", "no-subspace-lstm"]
ObjectiveData = Literal["batch", "full"]

_TASK_FAMILY: dict[str, Family] = {
    "pca": "grassmann",
    "classifier": "stiefel",
    "constant": "grassmann",
}

_SHAPE_TOKEN = re.compile(r"^(?:(?P<task>[a-z]+):)?(?P<d>\d+)x(?P<p>\d+)$")


class ManifoldKind(BaseModel):
    """Stiefel(d, p) or Grassmann(d, p), 1 <= p <= d."""
    model_config = ConfigDict(frozen=True)

    family: Family = Field(description="Manifold family")
    d: int = Field(ge=1, description="Ambient rows")
    p: int = Field(ge=1, description="Columns")

    @model_validator(mode="after")
    def _p_le_d(self):
        if self.p > self.d:
            raise ValueError(f"p={self.p} exceeds d={self.d}")
        return self

    @property
    def label(self) -> str:
        return f"{self.family.capitalize()}({self.d},{self.p})"


class ShapeSpec(BaseModel):
    """One Riemannian parameter of a run: which task drives it and its size."""
    model_config = ConfigDict(frozen=True)

    task: TaskKind = Field(description="Task owning this parameter")
    d: int = Field(ge=1, description="Rows (feature dimension)")
    p: int = Field(ge=1, description="Columns (subspace rank or class count)")

    @classmethod
    def parse(cls, token: str, default_task: str) -> "ShapeSpec":
        """Parse `20x4` or `classifier:32x8`."""
        m = _SHAPE_TOKEN.match(token.strip().lower())
        if not m:
            raise ValueError(f"bad shape token {token!r} (expected DxP or task:DxP)")
        return cls(task=m.group("task") or default_task, d=int(m.group("d")), p=int(m.group("p")))

    @property
    def manifold(self) -> ManifoldKind:
        return ManifoldKind(family=_TASK_FAMILY[self.task], d=self.d, p=self.p)

    @property
    def param_id(self) -> str:
        return f"{self.task}-{self.d}x{self.p}"

    def token(self) -> str:
        return f"{self.task}:{self.d}x{self.p}"


class TaskSpec(BaseModel):
    """A task instance: which loss, on which manifold, fed how."""
    kind: TaskKind = Field(description="pca, classifier, or the constant diagnostic task")
    manifold: ManifoldKind = Field(description="Manifold of the parameter")
    batch_size: int = Field(default=64, ge=1, description="Samples per step (>= n means full batch)")
    dataset_size: int = Field(default=512, ge=1, description="Synthetic sample count")
    noise: float = Field(default=0.1, ge=0.0, description="Synthetic observation noise")
    label_noise: float = Field(default=0.05, ge=0.0, le=1.0, description="Classifier label flip rate")
    data_seed: int = Field(default=0, description="Seed of the synthetic generator")
    idx_images: Optional[str] = Field(default=None, description="IDX image file instead of synthetic data")
    idx_labels: Optional[str] = Field(default=None, description="IDX label file (classifier)")

    @model_validator(mode="after")
    def _family_matches(self):
        if self.manifold.family != _TASK_FAMILY[self.kind]:
            raise ValueError(f"{self.kind} runs on {_TASK_FAMILY[self.kind]}, not {self.manifold.family}")
        return self


class MetaConfig(BaseModel):
    """Everything a meta-training run depends on."""
    model_config = ConfigDict(extra="forbid")

    inner_steps: int = Field(default=5, ge=1, description="T: inner updates per outer iteration")
    outer_steps: int = Field(default=300, ge=1, description="tau: outer iterations")
    batch_size: int = Field(default=64, ge=1, description="n: samples per inner step")
    outer_lr: float = Field(default=0.001, gt=0.0, description="Learning rate of the outer update")
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    outer_optimizer: Literal["adam", "sgd"] = Field(default="adam")
    seed: int = Field(default=0)
    truncation: Literal["per-step-detach"] = Field(default="per-step-detach")
    task: TaskKind = Field(default="pca", description="Default task for untagged shapes")
    shapes: list[ShapeSpec] = Field(default_factory=lambda: [ShapeSpec(task="pca", d=20, p=4)])
    hidden_size: int = Field(default=20, ge=1)
    num_layers: int = Field(default=2, ge=1)
    init: Literal["uniform", "zeros"] = Field(default="uniform")
    init_scale: float = Field(default=0.1, ge=0.0)
    mode: AdaptationMode = Field(default="full")
    persist_theta: bool = Field(default=False, description="Carry theta across outer iterations")
    objective_data: ObjectiveData = Field(default="batch",
                                          description="Score post-update losses on the step's batch or the full dataset")
    record_timing: bool = Field(default=False, description="Write real wall_ms instead of 0")
    dataset_size: int = Field(default=512, ge=1)
    noise: float = Field(default=0.1, ge=0.0)
    label_noise: float = Field(default=0.05, ge=0.0, le=1.0)
    idx_images: Optional[str] = Field(default=None)
    idx_labels: Optional[str] = Field(default=None)

    @field_validator("shapes")
    @classmethod
    def _unique_shapes(cls, shapes: list[ShapeSpec]) -> list[ShapeSpec]:
        if not shapes:
            raise ValueError("at least one shape is required")
        ids = [s.param_id for s in shapes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate shapes in {ids}")
        for s in shapes:
            if s.p > s.d:
                raise ValueError(f"{s.param_id}: p exceeds d")
        return shapes

    def task_spec(self, shape: ShapeSpec, data_seed: int) -> TaskSpec:
        return TaskSpec(
            kind=shape.task,
            manifold=shape.manifold,
            batch_size=self.batch_size,
            dataset_size=self.dataset_size,
            noise=self.noise,
            label_noise=self.label_noise,
            data_seed=data_seed,
            idx_images=self.idx_images,
            idx_labels=self.idx_labels,
        )


class GradCheckReport(BaseModel):
    """Worst-case disagreement between tape and central-difference gradients."""
    name: str = Field(default="", description="Check label")
    max_abs_err: float = Field(ge=0.0)
    max_rel_err: float = Field(ge=0.0)
    probe_count: int = Field(ge=0)

    def passed(self, rel_tol: float) -> bool:
        return self.max_rel_err <= rel_tol

    @classmethod
    def worst(cls, name: str, reports: list["GradCheckReport"]) -> "GradCheckReport":
        return cls(
            name=name,
            max_abs_err=max((r.max_abs_err for r in reports), default=0.0),
            max_rel_err=max((r.max_rel_err for r in reports), default=0.0),
            probe_count=sum(r.probe_count for r in reports),
        )


class InnerStepLog(BaseModel):
    """One trajectory CSV row."""
    outer_step: int
    inner_step: int
    param_id: str
    loss: float
    feasibility: float
    wall_ms: float = 0.0


class OuterStepLog(BaseModel):
    """One meta CSV row."""
    outer_step: int
    meta_objective: float
    grad_norm: float


class TrajectoryRecord(BaseModel):
    """Losses of an unrolled inner loop plus the outer-loop history."""
    step_losses: list[float] = Field(default_factory=list, description="Post-update loss per inner step, summed over parameters")
    inner: list[InnerStepLog] = Field(default_factory=list)
    outer: list[OuterStepLog] = Field(default_factory=list)

    def extend(self, other: "TrajectoryRecord") -> None:
        self.inner.extend(other.inner)
        self.outer.extend(other.outer)


class MemoryRow(BaseModel):
    """Parameter storage of one optimizer for one model catalog."""
    model: str
    method: Literal["gmlstm", "ours"]
    params: int = Field(ge=0)
    bytes: int = Field(ge=0)

    @model_validator(mode="after")
    def _four_bytes(self):
        if self.bytes != 4 * self.params:
            raise ValueError("bytes must equal 4 x params")
        return self

    @property
    def mb(self) -> float:
        """Mebibytes."""
        return self.bytes / 1048576

    @property
    def kb(self) -> float:
        """Kibibytes."""
        return self.bytes / 1024


class MemoryReport(BaseModel):
    """Memory comparison over one or more shape catalogs."""
    rows: list[MemoryRow] = Field(default_factory=list)

    def row(self, model: str, method: str) -> MemoryRow:
        for r in self.rows:
            if r.model == model and r.method == method:
                return r
        raise KeyError((model, method))


class RunConfig(BaseModel):
    """A resolved CLI invocation."""
    model_config = ConfigDict(extra="forbid")

    command: Literal["train", "evaluate"]
    out_dir: str = Field(default="runs")
    meta: MetaConfig = Field(default_factory=MetaConfig)
    checkpoint: Optional[str] = None
    optimizer: Optional[str] = None
    steps: int = Field(default=200, ge=0)
    seeds: list[int] = Field(default_factory=lambda: [101, 102, 103, 104, 105])
    alpha: Optional[float] = Field(default=None, ge=0.0)
    beta: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.99, ge=0.0, le=1.0)
    epsilon: float = Field(default=1e-8, gt=0.0)

    def echo(self) -> dict[str, str]:
        """Flat key=value view for the resolved-config file."""
        flat: dict[str, str] = {"command": self.command, "out_dir": self.out_dir}
        for key, value in self.meta.model_dump().items():
            if key == "shapes":
                value = ",".join(s.token() for s in self.meta.shapes)
            flat[key] = _fmt(value)
        for key in ("checkpoint", "optimizer", "steps", "seeds", "alpha", "beta", "beta2", "epsilon"):
            value = getattr(self, key)
            if key == "seeds":
                value = ",".join(str(s) for s in value)
            flat[key] = _fmt(value)
        return flat


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)
