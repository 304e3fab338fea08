"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class RedaeError(Exception):
    """Base class for all package errors."""


class ShapeError(RedaeError, ValueError):
    """Tensor or mask shapes do not satisfy an operation's contract."""


class AutodiffError(RedaeError, RuntimeError):
    """Misuse of the gradient tape (non-scalar loss, double backward, ...)."""


class DataError(RedaeError, ValueError):
    """Malformed files, illegal labels, or inconsistent datasets."""


class ConfigError(RedaeError, ValueError):
    """Invalid configuration keys or values."""


class NumericError(RedaeError, ArithmeticError):
    """Non-finite values produced where finite math is required."""
