"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class UnlearnRecError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(UnlearnRecError):
    """Invalid configuration value, key, or vocabulary."""


class DataError(UnlearnRecError):
    """Malformed, missing, or inconsistent data."""


class NumericError(UnlearnRecError):
    """Non-finite values encountered during optimization."""
