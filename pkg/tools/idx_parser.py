"""
Reader for MNIST-style IDX files.

Layout (big-endian):
  0000  u32  magic   0x00000803 images | 0x00000801 labels
  0004  u32  dim 0   item count
  0008  u32  dim 1   rows      (images only)
  0012  u32  dim 2   columns   (images only)
  ....  u8[] payload, row-wise

Images come back flattened to rows*cols features scaled to [0, 1].
Files ending in .gz are decompressed first.
"""

import gzip
import logging
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from tools.errors import DataError, IdxParseError
from tools.tasks import Dataset, digest

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

_DIMS = {IMAGE_MAGIC: 3, LABEL_MAGIC: 1}

# Largest payload we accept, in bytes.
MAX_PAYLOAD = 2**31 - 1


def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def parse_idx(blob: bytes) -> np.ndarray:
    """Parse raw IDX bytes: images -> (n, rows*cols) float64, labels -> (n,) int64."""
    if len(blob) < 4:
        raise IdxParseError("truncated magic", len(blob))
    (magic,) = struct.unpack_from(">I", blob, 0)
    if magic not in _DIMS:
        raise IdxParseError("unsupported magic", 0)

    ndim = _DIMS[magic]
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise IdxParseError("truncated header", len(blob))
    dims = struct.unpack_from(f">{ndim}I", blob, 4)

    size = 1
    for i, dim in enumerate(dims):
        size *= dim
        if size > MAX_PAYLOAD:
            raise IdxParseError(f"dimension overflow ({'x'.join(map(str, dims))})", 4 + 4 * i)

    if len(blob) < header + size:
        raise IdxParseError(f"truncated payload: need {size} bytes, have {len(blob) - header}", len(blob))
    if len(blob) > header + size:
        logger.warning("IDX file has %d trailing bytes after offset %d", len(blob) - header - size, header + size)

    payload = np.frombuffer(blob, dtype=np.uint8, count=size, offset=header)
    if magic == LABEL_MAGIC:
        return payload.astype(np.int64)
    n, rows, cols = dims
    return payload.reshape(n, rows * cols).astype(np.float64) / 255.0


def load_idx(path: Union[str, Path]) -> np.ndarray:
    return parse_idx(_read_bytes(path))


def load_idx_dataset(images_path: Union[str, Path], labels_path: Optional[Union[str, Path]] = None) -> Dataset:
    """Images (and labels) as a Dataset tagged with a SHA-256 digest of the raw files."""
    image_blob = _read_bytes(images_path)
    X = parse_idx(image_blob)
    if X.ndim != 2:
        raise DataError(f"{images_path} holds labels, expected images")

    y, num_classes, blobs = None, None, [image_blob]
    if labels_path is not None:
        label_blob = _read_bytes(labels_path)
        y = parse_idx(label_blob)
        if y.ndim != 1:
            raise DataError(f"{labels_path} holds images, expected labels")
        if y.shape[0] != X.shape[0]:
            raise DataError(f"{y.shape[0]} labels for {X.shape[0]} images")
        num_classes = int(y.max()) + 1 if y.size else 0
        blobs.append(label_blob)

    tag = digest(*blobs)
    logger.info("loaded %d IDX samples of dim %d (sha256 %s)", X.shape[0], X.shape[1], tag)
    return Dataset(X=X, y=y, provenance=f"idx sha256={tag}", num_classes=num_classes)
