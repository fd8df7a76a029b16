"""
Configuration management for the grid minigame A3C trainer.
Contains environment sizes, network layer tables, training defaults and file formats.
"""
from typing import Dict, List, Tuple


class EnvConfig:
    """Minigame suite settings."""

    # Grid settings
    RESOLUTION: int = 16  # Desk-scale default; 64 matches the original screen size
    MIN_RESOLUTION: int = 8
    MAX_RESOLUTION: int = 64
    EPISODE_CAP: int = 120  # Decision steps per episode

    # Feature layer layout shared by every minigame (transfer needs identical shapes)
    SCREEN_CHANNELS: int = 3  # own units, targets, selection
    MINIMAP_CHANNELS: int = 2  # own units, explored
    FLAT_DIM: int = 2  # selected fraction, step fraction

    MINIGAMES: Tuple[str, ...] = ("beacon", "shards", "hunt", "skirmish")

    # shards
    NUM_SHARDS: int = 20
    SHARD_SPACING: int = 2  # Chebyshev distance between spawned shards and units

    # hunt
    NUM_HUNT_TARGETS: int = 10
    NUM_HUNT_UNITS: int = 3
    ATTACK_RANGE: int = 1

    # skirmish
    NUM_SKIRMISH_UNITS: int = 3
    NUM_SKIRMISH_ENEMIES: int = 4
    SKIRMISH_ENEMY_HP: int = 2


class NetworkConfig:
    """Layer tables for the three architectures (channels, kernel size)."""

    BRANCH_LAYERS: Dict[str, List[Tuple[int, int]]] = {
        "baseline": [(16, 5), (32, 3)],
        "plusfc": [(16, 5), (32, 3)],
        "plusconv": [(32, 5), (48, 3), (16, 3)],
    }

    FLAT_UNITS: int = 256
    SHARED_UNITS: int = 256
    PLUSFC_UNITS: int = 128  # Extra FC before value and non-spatial outputs
    SPATIAL_KERNEL: int = 1

    VARIANTS: Tuple[str, ...] = ("baseline", "plusfc", "plusconv")


class TrainingConfig:
    """A3C defaults. Learning rate, discount and exploration come from the original setup."""

    LEARNING_RATE: float = 5e-4
    DISCOUNT: float = 0.99
    WORKERS: int = 4
    T_MAX: int = 16

    # Epsilon-greedy schedule (linear decay over the first fraction of training)
    EPSILON_START: float = 1.0
    EPSILON_END: float = 0.05
    EPSILON_DECAY_FRACTION: float = 0.25

    ENTROPY_COEF: float = 0.0
    VALUE_COEF: float = 0.5
    GRAD_CLIP: float = 40.0

    # Shared RMSProp
    RMSPROP_ALPHA: float = 0.99
    RMSPROP_EPS: float = 1e-8

    EPISODES: int = 20000
    CHECKPOINT_EVERY: int = 100  # Episodes between evaluation points
    SCORE_WINDOW: int = 100  # Episodes averaged for the recent mean score


class CheckpointConfig:
    """Binary checkpoint format."""

    MAGIC: bytes = b"A3CK"
    VERSION: int = 1
    SUFFIX: str = ".ckpt"


class OutputConfig:
    """Run directory layout and CSV schemas."""

    TRAIN_LOG: str = "train_log.csv"
    EVAL_LOG: str = "eval.csv"
    COMPARE_LOG: str = "compare.csv"
    COMPARE_SUMMARY: str = "compare_summary.txt"
    BASELINES_LOG: str = "baselines.csv"
    CONFIG_ECHO: str = "config.echo"
    BEST_CHECKPOINT: str = "best.ckpt"
    CHECKPOINT_DIR: str = "checkpoints"

    TRAIN_HEADER: List[str] = ["episode", "worker", "global_step", "score", "wallclock_ms"]
    EVAL_HEADER: List[str] = ["episode", "seed", "score"]
    COMPARE_HEADER: List[str] = ["variant", "seed", "best_score", "episodes_to_threshold"]
    BASELINES_HEADER: List[str] = ["policy", "mean", "std", "max", "episodes"]


class ExperimentConfig:
    """Convergence thresholds for compare/transfer experiments."""

    THRESHOLD_FRACTION: float = 0.8  # Of the oracle mean score
    HUNT_THRESHOLD: float = 3.0  # Absolute score; hunt has no oracle
    ORACLE_EPISODES: int = 100  # Episodes simulated to estimate the oracle mean
