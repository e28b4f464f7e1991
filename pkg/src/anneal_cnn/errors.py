"""Exception hierarchy shared by every module."""


class AnnealCNNError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(AnnealCNNError, ValueError):
    """Shapes or lengths do not line up.

    ``axis`` names the offending axis when one can be identified.
    """

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class DomainError(AnnealCNNError, ValueError):
    """An argument lies outside the values an operation accepts."""


class NumericError(AnnealCNNError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""

    def __init__(self, message, name=None):
        super().__init__(message)
        self.name = name


class StateError(AnnealCNNError, RuntimeError):
    """An operation was called before the state it depends on exists."""


class SizeError(AnnealCNNError, ValueError):
    """A problem is too large for an exhaustive method."""


class FormatError(AnnealCNNError, ValueError):
    """A file does not follow the expected binary or text layout."""


class LengthError(FormatError):
    """A file payload is shorter or longer than its header declares."""
