"""
Errors raised while reading, writing or transferring checkpoints.
"""


class CheckpointError(ValueError):
    """Base class for malformed or unusable checkpoint files."""


class BadMagicError(CheckpointError):
    """The file does not start with the checkpoint magic bytes."""


class VersionMismatchError(CheckpointError):
    """The file was written by an unsupported format version."""


class ShapeMismatchError(CheckpointError):
    """Stored tensors disagree with the architecture declared in the metadata."""


class TruncatedCheckpointError(CheckpointError):
    """The file ends before the declared content."""


class IncompatibleCheckpointError(CheckpointError):
    """A checkpoint cannot seed a run with the requested architecture or observations."""
