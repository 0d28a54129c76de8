"""
Checkpoint text format.

    format_version 1
    hidden_size 20
    num_layers 2
    parameter_count 10442
    seed 0
    adam_t 300
    tensor net_r.l0.w_ih 80 1
    <row-major values, 17 significant digits, space separated>
    ...
    tensor adam.m.net_r.l0.w_ih 80 1
    ...

One-dimensional arrays are stored as 1 x n. Lines starting with `#` are
comments; `# config key = value` lines carry the training config echo.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from optimizers.subspace import OptimizerParams, count_parameters
from tools.csv_io import write_atomic
from tools.errors import CheckpointError, CheckpointSchemaError, CheckpointShapeError, CheckpointVersionError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADER_KEYS = ("format_version", "hidden_size", "num_layers", "parameter_count", "seed", "adam_t")


@dataclass
class Checkpoint:
    hidden_size: int
    num_layers: int
    seed: int
    adam_t: int
    params: OptimizerParams
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    config: dict[str, str] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def parameter_count(self) -> int:
        return count_parameters(self.hidden_size, self.num_layers)


def _tensor_lines(name: str, arr: np.ndarray) -> list[str]:
    view = arr.reshape(1, -1) if arr.ndim == 1 else arr
    rows, cols = view.shape
    values = " ".join(format(float(x), ".17g") for x in view.ravel())
    return [f"tensor {name} {rows} {cols}", values]


def dumps(ckpt: Checkpoint) -> str:
    lines = [
        f"format_version {ckpt.format_version}",
        f"hidden_size {ckpt.hidden_size}",
        f"num_layers {ckpt.num_layers}",
        f"parameter_count {ckpt.parameter_count}",
        f"seed {ckpt.seed}",
        f"adam_t {ckpt.adam_t}",
    ]
    lines += [f"# config {k} = {ckpt.config[k]}" for k in sorted(ckpt.config)]
    arrays = ckpt.params.named_arrays()
    for name, arr in arrays.items():
        lines += _tensor_lines(name, arr)
    for prefix, moments in (("adam.m", ckpt.adam_m), ("adam.v", ckpt.adam_v)):
        for name in arrays:
            lines += _tensor_lines(f"{prefix}.{name}", moments[name])
    return "\n".join(lines) + "\n"


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = write_atomic(path, dumps(ckpt))
    logger.info("checkpoint saved to %s (%d params)", path, ckpt.parameter_count)
    return path


def _int_field(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise CheckpointSchemaError(f"field {key!r} is not an integer: {raw!r}") from None


def loads(text: str) -> Checkpoint:
    header: dict[str, int] = {}
    config: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    lines = [ln for ln in text.splitlines() if ln.strip()]
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("config ") and "=" in body:
                key, value = body[len("config "):].split("=", 1)
                config[key.strip()] = value.strip()
            continue
        parts = line.split()
        key = parts[0]
        if key == "tensor":
            if len(parts) != 4:
                raise CheckpointSchemaError(f"malformed tensor record: {line!r}")
            name = parts[1]
            rows, cols = _int_field(name, parts[2]), _int_field(name, parts[3])
            if i >= len(lines):
                raise CheckpointSchemaError(f"tensor {name!r} has no values")
            try:
                values = np.array([float(tok) for tok in lines[i].split()], dtype=np.float64)
            except ValueError:
                raise CheckpointSchemaError(f"tensor {name!r} has a non-numeric value") from None
            i += 1
            if values.size != rows * cols:
                raise CheckpointShapeError(f"tensor {name!r} declares {rows}x{cols} but holds {values.size} values")
            tensors[name] = values.reshape(rows, cols)
        elif key in HEADER_KEYS:
            if len(parts) != 2:
                raise CheckpointSchemaError(f"malformed header line: {line!r}")
            header[key] = _int_field(key, parts[1])
            if key == "format_version" and header[key] != FORMAT_VERSION:
                raise CheckpointVersionError(f"format_version {header[key]} is not supported (expected {FORMAT_VERSION})")
        else:
            raise CheckpointSchemaError(f"unknown field {key!r}")

    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        raise CheckpointSchemaError(f"missing header fields: {', '.join(missing)}")
    hidden, layers = header["hidden_size"], header["num_layers"]
    if hidden < 1 or layers < 1:
        raise CheckpointSchemaError(f"hidden_size={hidden} and num_layers={layers} must be >= 1")
    if header["parameter_count"] != count_parameters(hidden, layers):
        raise CheckpointShapeError(
            f"parameter_count {header['parameter_count']} does not match hidden_size={hidden}, num_layers={layers}")

    template = OptimizerParams.zeros(hidden, layers).named_arrays()
    expected = set(template) | {f"adam.m.{n}" for n in template} | {f"adam.v.{n}" for n in template}
    unknown = sorted(set(tensors) - expected)
    if unknown:
        raise CheckpointSchemaError(f"unknown tensor {unknown[0]!r}")
    absent = sorted(expected - set(tensors))
    if absent:
        raise CheckpointSchemaError(f"missing tensor {absent[0]!r}")

    def take(name: str, like: np.ndarray) -> np.ndarray:
        arr = tensors[name]
        stored = like.reshape(1, -1).shape if like.ndim == 1 else like.shape
        if arr.shape != stored:
            raise CheckpointShapeError(f"tensor {name!r} is {arr.shape[0]}x{arr.shape[1]}, expected {stored[0]}x{stored[1]}")
        return arr.reshape(like.shape)

    weights = {n: take(n, a) for n, a in template.items()}
    params = OptimizerParams.zeros(hidden, layers).with_arrays(weights)
    return Checkpoint(
        hidden_size=hidden,
        num_layers=layers,
        seed=header["seed"],
        adam_t=header["adam_t"],
        params=params,
        adam_m={n: take(f"adam.m.{n}", a) for n, a in template.items()},
        adam_v={n: take(f"adam.v.{n}", a) for n, a in template.items()},
        config=config,
        format_version=header["format_version"],
    )


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    ckpt = loads(text)
    logger.info("checkpoint loaded from %s (hidden=%d, layers=%d)", path, ckpt.hidden_size, ckpt.num_layers)
    return ckpt
