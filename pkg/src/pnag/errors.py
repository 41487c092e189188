"""Exception types shared across the package."""


class PnagError(Exception):
    """Base class for all package errors."""


class ValidationError(PnagError, ValueError):
    """An architecture, config or record violates its contract."""


class ConfigError(PnagError, ValueError):
    """A configuration file or table is incomplete or inconsistent."""


class EnumerationLimitError(ValidationError):
    """Exhaustive enumeration refused because the space is too large."""

    def __init__(self, count: int, limit: int):
        self.count = count
        self.limit = limit
        super().__init__(f"search space has {count} architectures, exceeds limit {limit}")


class NumericalError(PnagError, ArithmeticError):
    """Non-finite values or divergence during training."""
