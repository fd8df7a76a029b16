"""
Errors raised by the policy network.
"""


class ZeroProbabilityError(ValueError):
    """Raised when asked for the log-probability of an action the policy cannot take."""
