"""Exception hierarchy shared across the package."""


class TransferLabError(Exception):
    """Base class for all package errors."""


class ConfigError(TransferLabError):
    """Invalid configuration, dimensions, or experiment setup."""


class UsageError(TransferLabError):
    """API misuse, e.g. a stale tape or an out-of-range action."""


class NumericalError(TransferLabError):
    """Non-finite loss or gradient encountered during training."""
