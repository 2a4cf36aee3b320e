"""Exception types shared across the package."""


class BssError(Exception):
    """Base class for all package errors."""


class DomainError(BssError, ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class InvalidParameter(BssError, ValueError):
    """A model or kernel parameter violates one of its invariants."""


class ConfigError(BssError, ValueError):
    """An experiment configuration file is malformed."""


class NumericalError(BssError, ArithmeticError):
    """A numerical routine failed to reach its accuracy target.

    ``estimate`` and ``error_bound`` carry whatever the routine achieved,
    when it got that far.
    """

    def __init__(self, message, estimate=None, error_bound=None):
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound
