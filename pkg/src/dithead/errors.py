"""Exception hierarchy shared by every module."""


class DitHeadError(Exception):
    """Base class for all package errors."""


class DimensionError(DitHeadError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(DitHeadError, ValueError):
    """An argument is outside its valid range."""


class StateError(DitHeadError, RuntimeError):
    """An operation was invoked in an invalid state (e.g. stage order)."""


class GeometryError(DitHeadError, ValueError):
    """Degenerate geometric input (too few or collinear points)."""


class NumericError(DitHeadError, ArithmeticError):
    """A computation produced non-finite values."""


class UndefinedCorrelationError(DitHeadError, ValueError):
    """Correlation requested for a zero-variance signal."""


class ValidationError(DitHeadError, ValueError):
    """Config or input validation failed; ``field`` holds the dotted path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class CheckpointError(DitHeadError, ValueError):
    """Checkpoint file is corrupted, truncated or has the wrong version."""
