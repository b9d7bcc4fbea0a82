"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class DomainError(ValueError):
    """An input lies outside the domain a problem is defined on."""


class RangeError(ValueError):
    """A metric denominator (max - min, variance) is zero."""


class ConfigurationError(ValueError):
    """A configuration is structurally invalid (missing rows, bad counts)."""


class ConditioningError(ArithmeticError):
    """A covariance matrix stayed non-factorizable after jitter escalation."""


class NumericError(ArithmeticError):
    """A non-finite value appeared; carries the location it was detected at."""

    def __init__(self, message: str, block_index: int | None = None,
                 sample_index: int | None = None):
        super().__init__(message)
        self.block_index = block_index
        self.sample_index = sample_index
