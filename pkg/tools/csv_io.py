"""
CSV and text output helpers. Numbers are written with 9 significant digits,
LF newlines, and every file lands atomically (temp file, then rename).
"""

import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence, Union

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def fmt_number(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return str(value)
        return f"{value:.9g}"
    return str(value)


def write_atomic(path: PathLike, text: str) -> Path:
    """Write `text` to `path` via a sibling temp file and os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug("wrote %s (%d bytes)", path, len(text))
    return path


def render_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_number(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return write_atomic(path, render_csv(header, rows))


def write_key_values(path: PathLike, values: dict[str, str]) -> Path:
    """`key = value` lines in sorted key order."""
    text = "".join(f"{k} = {values[k]}\n" for k in sorted(values))
    return write_atomic(path, text)
