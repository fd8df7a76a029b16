"""
Errors raised by the actor-learner training loop.
"""
from pathlib import Path
from typing import Optional

from app.numcore.exceptions import NumericalError


class TrainingError(RuntimeError):
    """A training run was aborted; partial logs were flushed to log_path."""

    def __init__(self, message: str, log_path: Optional[Path] = None):
        super().__init__(message)
        self.log_path = log_path


class GradientError(NumericalError):
    """Accumulated gradients are not finite."""
