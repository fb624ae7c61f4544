"""Exception types raised across the package."""


class PairLaserError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(PairLaserError, ValueError):
    """Operator, state or basis dimensions are inconsistent or too small."""


class TruncationTooLargeError(PairLaserError, MemoryError):
    """The requested superoperator exceeds the configured size limit."""


class SolverFailedError(PairLaserError, RuntimeError):
    """An iterative linear solve did not reach the requested residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NotConvergedError(PairLaserError, RuntimeError):
    """A time integration ended before reaching its convergence target."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PositivityError(PairLaserError, ValueError):
    """A density matrix has an eigenvalue below the positivity floor."""


class StepSizeTooLargeError(PairLaserError, RuntimeError):
    """The wave-function norm collapsed within a single time step."""


class IncompatibleRecordsError(PairLaserError, ValueError):
    """Trajectory records cannot be combined (different time grids)."""


class UndefinedObservableError(PairLaserError, ValueError):
    """An observable is undefined for the given state, e.g. Q with <n> = 0."""


class InstabilityError(PairLaserError, RuntimeError):
    """Mean-field integration diverged."""


class ConfigError(PairLaserError, ValueError):
    """Invalid run configuration."""
