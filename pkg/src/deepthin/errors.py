"""Exception types shared across the library."""

from __future__ import annotations


class DeepThinError(Exception):
    """Base class for library errors."""


class DimensionError(DeepThinError, ValueError):
    """Operand shapes are incompatible."""


class ArgumentError(DeepThinError, ValueError):
    """A scalar argument is out of its valid domain."""


class InfeasiblePlanError(DeepThinError, ValueError):
    """The requested compression ratio is below what the shape supports.

    ``lower_bounds`` maps matrix name (or ``""`` for a single matrix) to the
    minimum achievable ratio.
    """

    def __init__(self, message: str, lower_bounds: dict[str, float] | None = None):
        super().__init__(message)
        self.lower_bounds = dict(lower_bounds or {})


class UnsupportedConfigurationError(DeepThinError, ValueError):
    """The operation does not support this configuration (e.g. rank > 1)."""


class ScheduleError(DeepThinError, ValueError):
    """A pruning schedule asked for something impossible (e.g. density increase)."""


class ModelFormatError(DeepThinError, ValueError):
    """A serialized model failed to parse. ``offset`` is the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
