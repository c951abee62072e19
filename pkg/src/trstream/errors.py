"""Exception types raised across the package."""


class TRStreamError(Exception):
    """Base class for all package errors."""


class DomainError(TRStreamError, ValueError):
    """An argument lies outside the domain of an operation (bad mode, shape, index)."""


class NumericError(TRStreamError, ArithmeticError):
    """Non-finite or otherwise unusable numerical input."""


class FormatError(TRStreamError, ValueError):
    """A tensor file does not follow the TRT1 layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(TRStreamError, ValueError):
    """An experiment configuration is malformed."""
