"""Exception hierarchy and CLI exit-code categories.

Every error the package raises deliberately falls into one of three
categories so the command line interface can map failures to stable exit
codes: configuration problems (bad config files, unknown cases, invalid
parameter combinations), numerical problems (recovery divergence, NaNs,
profile solver failures), and I/O problems.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class MoistDgError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(MoistDgError):
    """Invalid configuration, unknown case, or inconsistent parameters."""

    exit_code = EXIT_CONFIG


class NumericalError(MoistDgError):
    """Numerical failure during a run (divergence, NaN, no root...)."""

    exit_code = EXIT_NUMERIC


class DomainError(NumericalError):
    """A thermodynamic function was called outside its domain."""


class RecoveryError(NumericalError):
    """The implicit-condensation Newton solve failed.

    Carries the offending inputs and, when raised from assembly, the
    element/point location.
    """

    def __init__(self, message, residual=None, location=None):
        if location is not None:
            message = f"{message} [at {location}]"
        if residual is not None:
            message = f"{message} (last residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual
        self.location = location


class ProfileError(NumericalError):
    """Hydrostatic profile construction failed at some height."""


class OutputError(MoistDgError):
    """Snapshot/diagnostics file could not be written or read."""

    exit_code = EXIT_IO
