"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies.
"""


class FunkanError(Exception):
    """Base class for all package errors."""


class ConfigError(FunkanError):
    """Invalid configuration, flags, or constructor arguments."""


class ShapeError(ConfigError):
    """Tensor shapes incompatible with the requested operation."""


class DataError(FunkanError):
    """Missing or malformed data files, splits, or checkpoints."""


class NumericError(FunkanError):
    """Non-finite values or numerically invalid state."""
