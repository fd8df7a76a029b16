"""
Errors raised by the minigame environments.
"""


class MinigameError(ValueError):
    """Raised for unknown minigames, bad settings, or stepping a finished episode."""


class InvalidActionError(ValueError):
    """Raised for malformed actions (bad function id or out-of-bounds spatial argument)."""
