"""
Pydantic models for training configuration and results.
"""
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import EnvConfig, TrainingConfig
from app.numcore.tensor import ParameterSet


class TrainConfig(BaseModel):
    """Hyperparameters of one A3C run."""

    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(TrainingConfig.LEARNING_RATE, gt=0.0, description="Optimizer step size")
    discount: float = Field(TrainingConfig.DISCOUNT, gt=0.0, le=1.0, description="Discount factor gamma")
    workers: int = Field(TrainingConfig.WORKERS, ge=1, description="Concurrent actor-learners")
    t_max: int = Field(TrainingConfig.T_MAX, ge=1, description="Maximum rollout length")

    epsilon_start: float = Field(TrainingConfig.EPSILON_START, ge=0.0, le=1.0)
    epsilon_end: float = Field(TrainingConfig.EPSILON_END, ge=0.0, le=1.0)
    epsilon_decay_fraction: float = Field(
        TrainingConfig.EPSILON_DECAY_FRACTION, ge=0.0, le=1.0,
        description="Fraction of the step budget over which epsilon decays linearly",
    )

    entropy_coef: float = Field(TrainingConfig.ENTROPY_COEF, ge=0.0, description="Entropy bonus weight beta")
    value_coef: float = Field(TrainingConfig.VALUE_COEF, ge=0.0, description="Weight of the squared value error")
    grad_clip: Optional[float] = Field(TrainingConfig.GRAD_CLIP, gt=0.0, description="Global gradient-norm bound")

    optimizer: Literal["rmsprop", "sgd"] = Field("rmsprop", description="Shared update rule")
    rmsprop_alpha: float = Field(TrainingConfig.RMSPROP_ALPHA, ge=0.0, lt=1.0)
    rmsprop_eps: float = Field(TrainingConfig.RMSPROP_EPS, gt=0.0)
    lock_mode: Literal["hogwild", "strict"] = Field("hogwild", description="Per-tensor locks or one global lock")

    episodes: int = Field(TrainingConfig.EPISODES, ge=1, description="Total episode budget")
    episode_cap: int = Field(EnvConfig.EPISODE_CAP, ge=1, description="Decision steps per episode")
    resolution: int = Field(EnvConfig.RESOLUTION, ge=EnvConfig.MIN_RESOLUTION, le=EnvConfig.MAX_RESOLUTION)

    checkpoint_every: int = Field(TrainingConfig.CHECKPOINT_EVERY, ge=1, description="Episodes between evaluation points")
    score_window: int = Field(TrainingConfig.SCORE_WINDOW, ge=1, description="Episodes in the recent mean score")
    rollback_ratio: float = Field(0.0, ge=0.0, le=1.0, description="Restore best parameters below this fraction of best")
    log_wallclock: Optional[bool] = Field(
        None, description="Record wall-clock ms in the log; defaults to off for a single worker so logs are reproducible"
    )

    @model_validator(mode="after")
    def check_schedule(self) -> "TrainConfig":
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must not exceed epsilon_start")
        return self

    @property
    def records_wallclock(self) -> bool:
        if self.log_wallclock is None:
            return self.workers > 1
        return self.log_wallclock

    def epsilon_at(self, global_step: int) -> float:
        """Linear decay from epsilon_start to epsilon_end over the first part of the step budget."""
        decay_steps = self.epsilon_decay_fraction * self.episodes * self.episode_cap
        if decay_steps <= 0 or global_step >= decay_steps:
            return self.epsilon_end
        fraction = global_step / decay_steps
        return self.epsilon_start + fraction * (self.epsilon_end - self.epsilon_start)


class EpisodeRecord(BaseModel):
    """One row of the training log."""

    episode: int = Field(..., ge=0)
    worker: int = Field(..., ge=0)
    global_step: int = Field(..., ge=0)
    score: float
    wallclock_ms: int = Field(0, ge=0)


class EvaluationPoint(BaseModel):
    """Recent mean score observed at a checkpoint boundary."""

    episode: int
    global_step: int
    mean_score: float
    best: bool = False
    rolled_back: bool = False


class TrainingLog(BaseModel):
    """Everything a finished run reports."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    records: List[EpisodeRecord] = Field(default_factory=list)
    evaluations: List[EvaluationPoint] = Field(default_factory=list)
    final_step: int = 0
    best_score: Optional[float] = None
    elapsed_seconds: float = 0.0
    steps_per_second: float = 0.0
    final_params: Optional[ParameterSet] = Field(None, exclude=True, description="Shared parameters at the end of the run")

    @property
    def scores(self) -> List[float]:
        return [record.score for record in self.records]

    @property
    def rollbacks(self) -> int:
        return sum(point.rolled_back for point in self.evaluations)
