"""Exception types shared across lzforge."""


class LZForgeError(Exception):
    """Base class for all lzforge errors."""


class DomainError(LZForgeError, ValueError):
    """An argument lies outside the domain of an operation."""


class NumericError(LZForgeError, ArithmeticError):
    """A computation produced non-finite values."""


class DesignError(LZForgeError, ValueError):
    """A pulse design constraint cannot be satisfied."""


class FitError(LZForgeError, ValueError):
    """Curve fitting failed or the data are degenerate."""


class ConfigError(LZForgeError, ValueError):
    """A run configuration is invalid.  ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
