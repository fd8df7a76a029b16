"""
Observation, action and episode-result types for the minigame suite.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.config import EnvConfig
from app.env.exceptions import InvalidActionError
from app.env.registry import FUNCTIONS, NUM_FUNCTIONS


class ObservationSpec(BaseModel):
    """Shapes of every observation a minigame emits."""

    model_config = ConfigDict(frozen=True)

    screen_channels: int = Field(EnvConfig.SCREEN_CHANNELS, ge=1, description="Screen feature layers")
    minimap_channels: int = Field(EnvConfig.MINIMAP_CHANNELS, ge=1, description="Minimap feature layers")
    resolution: int = Field(
        EnvConfig.RESOLUTION,
        ge=EnvConfig.MIN_RESOLUTION,
        le=EnvConfig.MAX_RESOLUTION,
        description="Side length N of the square screen and minimap",
    )
    flat_dim: int = Field(EnvConfig.FLAT_DIM, ge=1, description="Length of the non-spatial feature vector")
    num_functions: int = Field(NUM_FUNCTIONS, ge=1, description="Size of the global function registry")


@dataclass
class Observation:
    """
    Feature layers plus the availability mask.

    screen: (screen_channels, N, N), minimap: (minimap_channels, N, N),
    flat: (flat_dim,), available: (num_functions,) bool. Layers are in [0, 1].
    """

    screen: np.ndarray
    minimap: np.ndarray
    flat: np.ndarray
    available: np.ndarray

    def astype(self, dtype) -> "Observation":
        return Observation(
            screen=self.screen.astype(dtype),
            minimap=self.minimap.astype(dtype),
            flat=self.flat.astype(dtype),
            available=self.available,
        )


@dataclass(frozen=True)
class Action:
    """Function identifier plus an (x, y) pixel argument for spatial functions."""

    function_id: int
    spatial_arg: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if not 0 <= self.function_id < NUM_FUNCTIONS:
            raise InvalidActionError(f"Unknown function id: {self.function_id}")
        spec = FUNCTIONS[self.function_id]
        if spec.spatial and self.spatial_arg is None:
            raise InvalidActionError(f"{spec.name} requires a spatial argument")
        if not spec.spatial and self.spatial_arg is not None:
            raise InvalidActionError(f"{spec.name} takes no spatial argument")

    @property
    def name(self) -> str:
        return FUNCTIONS[self.function_id].name

    def pixel_index(self, resolution: int) -> Optional[int]:
        """Row-major index of the spatial argument in a flattened N x N map."""
        if self.spatial_arg is None:
            return None
        x, y = self.spatial_arg
        return y * resolution + x

    @classmethod
    def from_pixel(cls, function_id: int, pixel: Optional[int], resolution: int) -> "Action":
        if pixel is None or not FUNCTIONS[function_id].spatial:
            return cls(function_id)
        return cls(function_id, (int(pixel % resolution), int(pixel // resolution)))


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    episode_score: float


class ScoreStats(BaseModel):
    """Summary of episode scores."""

    mean: float = Field(..., description="Mean episode score")
    std: float = Field(..., ge=0.0, description="Population standard deviation")
    max: float = Field(..., description="Best episode score")
    episodes: int = Field(..., ge=1, description="Number of episodes")

    @classmethod
    def from_scores(cls, scores: Sequence[float]) -> "ScoreStats":
        values = np.asarray(scores, dtype=np.float64)
        return cls(
            mean=float(values.mean()),
            std=float(values.std()),
            max=float(values.max()),
            episodes=int(values.size),
        )


def episode_seeds(seed: int, episodes: int) -> List[int]:
    """Per-episode reset seeds derived deterministically from one run seed."""
    rng = np.random.default_rng(seed)
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=episodes)]
