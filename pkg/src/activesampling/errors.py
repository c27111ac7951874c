"""Exception types raised across the package."""


class ActiveSamplingError(Exception):
    """Base class for all package errors."""


class DomainError(ActiveSamplingError, ValueError):
    """A characteristic was evaluated outside its domain (zero denominator total)."""


class DegenerateScheme(ActiveSamplingError, ValueError):
    """Every importance score is zero, so no optimal scheme exists."""


class SingularDesign(ActiveSamplingError, ValueError):
    """A weighted design matrix is numerically singular."""


class FitFailed(ActiveSamplingError):
    """A surrogate model could not be fitted."""


class BatchTooSmall(ActiveSamplingError, ValueError):
    """A within-batch variance estimate needs at least two selections.

    ``iteration`` holds the (zero-based) offending iteration when known.
    """

    def __init__(self, message: str, iteration: int | None = None) -> None:
        super().__init__(message)
        self.iteration = iteration


class OracleFailure(ActiveSamplingError):
    """The label oracle raised or timed out.

    The partially completed loop result, if any, is attached as ``partial``.
    """

    def __init__(self, message: str, partial=None) -> None:
        super().__init__(message)
        self.partial = partial


class ConfigError(ActiveSamplingError, ValueError):
    """Invalid experiment or loop configuration."""


class PreconditionError(ActiveSamplingError, ValueError):
    """A benchmark method's requirements are not met by the population."""
