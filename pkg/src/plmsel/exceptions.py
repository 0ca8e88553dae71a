"""Exception hierarchy for plmsel."""

from __future__ import annotations

__all__ = [
    "PLMError",
    "DataError",
    "SchemaError",
    "EmptyDatasetError",
    "DegenerateCovariateError",
    "MissingTimesError",
    "DomainError",
    "ParameterError",
    "NumericalError",
    "IllConditionedError",
    "TooManyKnotsError",
    "CollinearityError",
    "SelectionError",
    "GenerationError",
    "UsageError",
]


class PLMError(Exception):
    """Base class for every error raised by this package."""


class DataError(PLMError, ValueError):
    """Input data cannot be used as given."""


class SchemaError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class DegenerateCovariateError(DataError):
    pass


class MissingTimesError(DataError):
    pass


class DomainError(DataError):
    """A covariate value lies outside the spline domain [0, 1]."""


class ParameterError(PLMError, ValueError):
    """Model or working-covariance parameters are outside their legal range."""


class NumericalError(PLMError, ArithmeticError):
    """A linear-algebra step failed or would be unreliable."""


class IllConditionedError(NumericalError):
    pass


class TooManyKnotsError(NumericalError):
    """The spline Gram block is singular; use fewer interior knots."""


class CollinearityError(NumericalError):
    """The profiled covariate matrix is singular."""


class SelectionError(NumericalError):
    pass


class GenerationError(PLMError, RuntimeError):
    pass


class UsageError(PLMError, ValueError):
    """Command-line flags are missing, unknown or inconsistent."""
