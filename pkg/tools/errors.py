"""
Exception hierarchy for the Subspace Meta-Optimizer.
Every error raised by the library derives from SubmetaError; each one also
subclasses the closest builtin so callers can catch either.
"""

from typing import Optional


class SubmetaError(Exception):
    """Root of all library errors."""


class DimensionError(SubmetaError, ValueError):
    """Operand shapes are incompatible."""


class SingularityError(SubmetaError, ArithmeticError):
    """A factorization met a (numerically) rank-deficient matrix."""

    def __init__(self, message: str, column: int):
        super().__init__(message)
        self.column = column


class NumericError(SubmetaError, ArithmeticError):
    """A computation produced NaN/Inf."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class FeasibilityError(NumericError):
    """A retracted point drifted off the manifold."""


class StateError(SubmetaError, ValueError):
    """Coordinate or baseline state does not match its parameter."""


class ConfigError(SubmetaError, ValueError):
    """Invalid or unknown configuration."""


class DataError(SubmetaError, ValueError):
    """Malformed task data (labels out of range, NaN samples, ...)."""


class IdxParseError(DataError):
    """IDX file could not be parsed; `offset` is the byte position at fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class CheckpointError(SubmetaError, ValueError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Unsupported `format_version`."""


class CheckpointSchemaError(CheckpointError):
    """Unknown, missing or malformed field."""


class CheckpointShapeError(CheckpointError):
    """A tensor record does not match the declared architecture."""


class DivergenceError(NumericError):
    """Meta-training produced a non-finite objective."""

    def __init__(self, message: str, last_good_step: int):
        super().__init__(message, step=last_good_step + 1)
        self.last_good_step = last_good_step
