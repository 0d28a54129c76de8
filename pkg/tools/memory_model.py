"""
Parameter-storage accounting: coordinate-wise gmLSTM optimizers versus the
shared subspace optimizer, over the weight shapes of common CNNs.
"""

import logging

from models.schemas import MemoryReport, MemoryRow
from optimizers.subspace import count_parameters
from tools.errors import ConfigError

logger = logging.getLogger(__name__)

BYTES_PER_PARAM = 4

_VGG16 = [(576, 64), (576, 128), (1152, 128), (1152, 256), (2304, 256), (2304, 512), (4608, 512)]

CATALOGS: dict[str, list[tuple[int, int]]] = {
    "vgg16": _VGG16,
    "resnet18": [(147, 64)] + _VGG16,
    "resnet50": [
        (576, 64), (256, 64), (256, 128), (1152, 128), (512, 128), (512, 256),
        (2304, 256), (1024, 256), (1024, 512), (4608, 512), (2048, 512),
    ],
}


def gmlstm_param_count(d: int, p: int) -> int:
    """34 d^2 + 1024 (d p + 1)."""
    if d < 1 or p < 1:
        raise ValueError(f"shape ({d}, {p}) must be positive")
    return 34 * d * d + 1024 * (d * p + 1)


def catalog_report(model: str, shapes: list[tuple[int, int]] | None = None) -> MemoryReport:
    """gmLSTM totals over a catalog, plus the constant row of the subspace optimizer."""
    if shapes is None:
        if model not in CATALOGS:
            raise ConfigError(f"unknown model {model!r} (choose from {', '.join(CATALOGS)})")
        shapes = CATALOGS[model]
    if not shapes:
        raise ConfigError(f"catalog {model!r} is empty")
    total = sum(gmlstm_param_count(d, p) for d, p in shapes)
    logger.debug("%s: %d shapes, %d gmLSTM params", model, len(shapes), total)
    gm = MemoryRow(model=model, method="gmlstm", params=total, bytes=BYTES_PER_PARAM * total)
    return MemoryReport(rows=[gm] + ours_report(model).rows)


def ours_report(model: str = "any", hidden: int = 20, layers: int = 2) -> MemoryReport:
    params = count_parameters(hidden, layers)
    return MemoryReport(rows=[MemoryRow(model=model, method="ours", params=params, bytes=BYTES_PER_PARAM * params)])


def full_report(models: list[str]) -> MemoryReport:
    """One gmLSTM row per model and a single row for ours."""
    rows = [catalog_report(m).row(m, "gmlstm") for m in models]
    label = models[0] if len(models) == 1 else "all"
    return MemoryReport(rows=rows + ours_report(label).rows)


def adaptation_flop_model(d: int, p: int) -> tuple[int, int]:
    """(subspace, full-matrix) flop coefficients of one adaptation."""
    if d < 1 or p < 1:
        raise ValueError(f"shape ({d}, {p}) must be positive")
    return 16 * d + 16 * p, 16 * p * p * d + p * d * d + 18 * p * d


def format_mb(row: MemoryRow) -> str:
    return f"{row.mb:.5g}"
