"""Exception hierarchy shared by all semmix modules.

Exit-code contract for the CLI: usage/config -> 1, data -> 2, numeric -> 3.
The class tree mirrors that split so the CLI can map by isinstance.
"""

from __future__ import annotations


class SemmixError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SemmixError):
    """Invalid configuration (bad STFT params, bad model hyperparameters, ...)."""


class DataError(SemmixError):
    """Bad or missing input data."""


class LengthError(DataError):
    """Signal shorter than an operation requires, or length mismatch."""


class ShapeError(DataError):
    """Array dimensions do not line up."""


class DomainError(DataError):
    """Inputs live in incompatible spaces (label spaces, embedding spaces)."""


class RangeError(DataError):
    """A breakpoint or index falls outside the valid range."""


class ValidationError(DataError):
    """A caption or serialized record failed validation."""


class DegenerateMassError(DataError):
    """A loudness trajectory carries no mass above the floor."""


class NumericError(SemmixError):
    """A numeric failure: NaN loss, zero normalization, overflow."""


class ClippingError(NumericError):
    """Synthesized mix exceeded the allowed peak range."""
