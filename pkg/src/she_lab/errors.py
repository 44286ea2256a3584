"""Exception types shared across the package."""


class SheLabError(Exception):
    """Base class for all package errors."""


class DomainError(SheLabError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class UnsupportedError(SheLabError, NotImplementedError):
    """The requested parameter combination is not implemented."""


class InvalidStateError(SheLabError, RuntimeError):
    """An object was used before it was put into a valid state."""


class DegenerateInputError(SheLabError, ValueError):
    """Input is valid in type but degenerate for the question asked (e.g. u0 == 0)."""


class OutOfRegimeError(SheLabError, ValueError):
    """Parameters fall outside the regime in which a bound is meaningful."""


class SingularParameterError(SheLabError, ValueError):
    """Parameters hit a singularity of a closed-form expression."""


class ConfigurationError(SheLabError, ValueError):
    """A simulation or experiment configuration failed validation."""


class InvalidArgumentError(SheLabError, ValueError):
    """A required argument is missing or inconsistent with the others."""
