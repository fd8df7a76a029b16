"""
Errors raised by the numerical core.
"""


class ConfigurationError(ValueError):
    """Raised when tensor shapes or layer settings do not agree."""


class NumericalError(ArithmeticError):
    """Raised when a forward or backward pass produces NaN or Inf."""


class EmptyMaskError(ValueError):
    """Raised when an availability mask has no legal entry."""
