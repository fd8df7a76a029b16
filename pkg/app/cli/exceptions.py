"""
Errors raised by the command-line harness.
"""


class UsageError(ValueError):
    """Invalid command-line arguments or configuration values."""
