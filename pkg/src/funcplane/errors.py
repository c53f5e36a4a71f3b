"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical failures with 3, and configuration mistakes with 4.
"""


class FuncplaneError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(FuncplaneError):
    """Malformed input data (missing columns, ragged grids, non-finite values)."""

    exit_code = 2


class DegenerateGridError(ValidationError):
    """Grid with duplicate evaluation points."""


class ConfigurationError(FuncplaneError):
    """Invalid configuration or parameter values."""

    exit_code = 4


class NumericalError(FuncplaneError):
    """A numerical procedure failed beyond recovery."""

    exit_code = 3


class SingularSystemError(NumericalError):
    """A regularized symmetric solve hit an indefinite/singular system.

    Carries ``min_eigenvalue``, an estimate of the smallest eigenvalue of the
    stabilized system matrix.
    """

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class CovarianceAssemblyError(NumericalError):
    """Assembled response covariance is not positive semidefinite."""


class FamilyConstructionError(NumericalError):
    """Could not build enough valid threshold candidates."""


class DiagnosticsError(NumericalError):
    """Too many resampling refits failed for the diagnostics to be trusted."""


class StudyError(NumericalError):
    """Too many Monte-Carlo replications failed inside a study."""
