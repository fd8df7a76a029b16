"""
Seeding a new run from another run's checkpoint.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Union
import logging

from app.ckpt.exceptions import IncompatibleCheckpointError
from app.ckpt.format import CheckpointMetadata, file_digest, load
from app.env.exceptions import MinigameError
from app.env.minigames import MINIGAMES
from app.net.architecture import ArchitectureSpec, shape_mismatches
from app.numcore.tensor import ParameterSet

logger = logging.getLogger(__name__)


@dataclass
class TransferSource:
    """Parameters copied from a source checkpoint plus provenance for the run log."""

    params: ParameterSet
    metadata: CheckpointMetadata
    path: Path
    digest: str

    @property
    def annotation(self) -> str:
        return f"source={self.path} sha256={self.digest}"


def transfer_init(source: Union[str, Path], target_minigame: str, target_arch: ArchitectureSpec) -> TransferSource:
    """
    Load a checkpoint as the initial parameters of a run on another minigame.

    Parameters are copied verbatim. The returned metadata describes the new
    run: target minigame, T = 0, no episodes. Optimizer statistics are not
    stored in checkpoints, so the new run starts with fresh ones.

    Raises:
        MinigameError: If target_minigame is unknown
        IncompatibleCheckpointError: If the variant, observation shapes or any
            tensor differ from the target architecture
        CheckpointError: If the file itself is malformed
    """
    if target_minigame not in MINIGAMES:
        raise MinigameError(f"Unknown minigame: {target_minigame}")

    path = Path(source)
    params, metadata = load(path)

    problems = shape_mismatches(target_arch, params.shapes())
    if problems:
        raise IncompatibleCheckpointError(
            f"Cannot transfer {metadata.variant} checkpoint into {target_arch.variant}: {problems[0]}"
        )
    if metadata.variant != target_arch.variant:
        raise IncompatibleCheckpointError(
            f"Checkpoint variant {metadata.variant} differs from target variant {target_arch.variant}"
        )
    source_spec = metadata.obs_spec.model_dump()
    for key, value in target_arch.obs_spec.model_dump().items():
        if source_spec[key] != value:
            raise IncompatibleCheckpointError(
                f"Observation {key} differs: checkpoint has {source_spec[key]}, target needs {value}"
            )

    fresh = CheckpointMetadata.for_run(target_arch, target_minigame)
    digest = file_digest(path)
    logger.info(f"Transfer: {metadata.minigame} -> {target_minigame} from {path} (sha256 {digest[:12]})")
    return TransferSource(params=params, metadata=fresh, path=path, digest=digest)
