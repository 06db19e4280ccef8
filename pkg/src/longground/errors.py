"""Exception hierarchy shared by all modules.

Every class maps to one CLI exit code (see ``longground.cli``).
"""


class GroundingError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class UsageError(GroundingError, ValueError):
    """Caller passed arguments that violate a precondition."""

    exit_code = 1


class DimensionError(UsageError):
    """Tensor extents do not line up."""


class ParameterError(UsageError):
    """A hyperparameter or configuration value is out of range."""


class FormatError(GroundingError):
    """A binary or text file does not match the expected layout."""

    exit_code = 2

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(GroundingError):
    """Dataset contents disagree with the configuration."""

    exit_code = 2


class NumericError(GroundingError, ArithmeticError):
    """Non-finite values reached an operation that cannot handle them."""

    exit_code = 3


class CheckError(NumericError):
    """A gradient check could not be carried out reliably."""
