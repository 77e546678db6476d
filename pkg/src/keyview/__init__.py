"""Informative view and ray selection for few-view radiance field training."""

from .errors import (
    ConstraintError,
    FormatError,
    InfeasibleCoverageError,
    InputError,
    KeyviewError,
    KTooSmallError,
    NumericError,
    SceneLoadError,
)

__version__ = "0.1.0"
