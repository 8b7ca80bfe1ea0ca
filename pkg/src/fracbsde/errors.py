"""Exception types raised across the package."""


class FracBSDEError(Exception):
    """Base class for all package errors."""


class SingularityError(FracBSDEError, ValueError):
    """The fractional kernel was evaluated at its singular point."""


class DomainError(FracBSDEError, ValueError):
    """A tabulated function does not cover the requested interval."""


class GridMismatchError(FracBSDEError, ValueError):
    """Two objects were built on different time grids."""


class PreconditionError(FracBSDEError, ValueError):
    """An input violates a documented precondition."""


class HorizonError(FracBSDEError, ValueError):
    """A shifted time falls beyond the anticipation horizon T + K."""


class UnverifiableDelayError(FracBSDEError, ValueError):
    """The delay certificate cannot be computed and none was supplied."""


class FactorizationError(FracBSDEError, RuntimeError):
    """The covariance matrix could not be factorized."""


class GeneratorClassError(FracBSDEError, ValueError):
    """A generator was used outside its declared structural class."""


class HypothesisViolation(FracBSDEError, ValueError):
    """A theorem hypothesis failed its numerical spot check."""


class ConvergenceError(FracBSDEError, RuntimeError):
    """Picard iteration did not reach the tolerance.

    The per-iteration history is kept on ``history`` for inspection.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ConfigError(FracBSDEError, ValueError):
    """An experiment configuration failed to parse or validate."""
