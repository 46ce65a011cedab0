"""Audio-driven talking-head synthesis with a latent diffusion transformer."""

from .errors import (
    CheckpointError,
    DimensionError,
    DitHeadError,
    GeometryError,
    NumericError,
    ParameterError,
    StateError,
    UndefinedCorrelationError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DimensionError",
    "DitHeadError",
    "GeometryError",
    "NumericError",
    "ParameterError",
    "StateError",
    "UndefinedCorrelationError",
    "ValidationError",
]
