"""
Exception types shared across the first-contact stiffness toolkit.
"""


class FirstContactError(ValueError):
    """Base class for every error raised deliberately by this package."""

    exit_code = 1


class ConfigError(FirstContactError):
    """Invalid or unknown configuration values."""

    exit_code = 2


class DataError(FirstContactError):
    """Input data that violates a documented precondition."""

    exit_code = 3


class AcceptanceError(FirstContactError):
    """A run finished but missed its acceptance threshold."""

    exit_code = 4
