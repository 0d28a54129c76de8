"""
Run configuration: `key = value` files, command-line overrides and .env defaults.

    # pca desk run
    task = pca
    shapes = 20x4
    inner_steps = 5
    outer_steps = 300
"""

import logging
import os
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from models.schemas import MetaConfig, RunConfig, ShapeSpec
from tools.errors import ConfigError

logger = logging.getLogger(__name__)

_RUN_KEYS = {"out_dir", "checkpoint", "optimizer", "steps", "seeds", "alpha", "beta", "beta2", "epsilon"}


def load_env() -> None:
    """Pull LOG_LEVEL / SUBMETA_OUT from a .env file when present."""
    load_dotenv()


def default_out_dir() -> str:
    return os.getenv("SUBMETA_OUT", "runs")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected `key = value`, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def read_config_file(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config_text(text, source=path)


def parse_shapes(raw: str, default_task: str) -> list[ShapeSpec]:
    tokens = [t for t in raw.split(",") if t.strip()]
    if not tokens:
        raise ConfigError("no shapes given")
    try:
        return [ShapeSpec.parse(t, default_task) for t in tokens]
    except (ValueError, ValidationError) as e:
        raise ConfigError(str(e)) from None


def parse_seeds(raw: str) -> list[int]:
    """`101,102` or a range `101..105`."""
    raw = raw.strip()
    try:
        if ".." in raw:
            lo, hi = (int(x) for x in raw.split("..", 1))
            return list(range(lo, hi + 1))
        return [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list {raw!r}") from None


def resolve(command: str, file_values: dict[str, str], overrides: dict[str, Any]) -> RunConfig:
    """Merge file values and flag overrides (flags win) into a validated RunConfig."""
    merged: dict[str, Any] = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})

    run_fields: dict[str, Any] = {"command": command}
    meta_fields: dict[str, Any] = {}
    for key, value in merged.items():
        (run_fields if key in _RUN_KEYS else meta_fields)[key] = value

    task = str(meta_fields.get("task", "pca"))
    if isinstance(meta_fields.get("shapes"), str):
        meta_fields["shapes"] = parse_shapes(meta_fields["shapes"], task)
    if isinstance(run_fields.get("seeds"), str):
        run_fields["seeds"] = parse_seeds(run_fields["seeds"])
    run_fields.setdefault("out_dir", default_out_dir())

    try:
        meta = MetaConfig(**meta_fields)
        return RunConfig(meta=meta, **run_fields)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from None


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        where = ".".join(str(x) for x in item["loc"]) or "config"
        if item["type"] == "extra_forbidden":
            parts.append(f"unknown key {where!r}")
        else:
            parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def load_run_config(command: str, config_path: Optional[str], overrides: dict[str, Any]) -> RunConfig:
    file_values = read_config_file(config_path) if config_path else {}
    run = resolve(command, file_values, overrides)
    logger.debug("resolved %s config: %s", command, run.echo())
    return run
