"""
Greedy evaluation of trained parameters.
"""
from typing import List, Tuple
import logging

from app.config import EnvConfig
from app.env.minigames import make_minigame
from app.env.policies import Policy, run_episode
from app.env.types import Action, Observation, ScoreStats, episode_seeds
from app.net.architecture import ArchitectureSpec
from app.net.network import PolicyNetwork, greedy_action
from app.numcore.tensor import ParameterSet

logger = logging.getLogger(__name__)


class GreedyPolicy(Policy):
    """Most probable function id, argmax pixel; no exploration."""

    def __init__(self, params: ParameterSet, arch: ArchitectureSpec):
        self.params = params
        self.network = PolicyNetwork(arch)

    def __call__(self, observation: Observation, game) -> Action:
        return greedy_action(self.network.forward(self.params, observation))


def evaluate_scores(
    params: ParameterSet,
    arch: ArchitectureSpec,
    minigame: str,
    episodes: int,
    seed: int,
    episode_cap: int = EnvConfig.EPISODE_CAP,
) -> Tuple[List[int], List[float]]:
    """Per-episode (reset seed, score) lists of the greedy policy."""
    if episodes < 1:
        raise ValueError(f"episodes must be positive, got {episodes}")
    game = make_minigame(minigame, arch.obs_spec.resolution, episode_cap)
    policy = GreedyPolicy(params, arch)
    seeds = episode_seeds(seed, episodes)
    scores = [run_episode(game, policy, s) for s in seeds]
    return seeds, scores


def evaluate(
    params: ParameterSet,
    arch: ArchitectureSpec,
    minigame: str,
    episodes: int,
    seed: int,
    episode_cap: int = EnvConfig.EPISODE_CAP,
) -> ScoreStats:
    """
    Score the greedy policy; params are only read.

    Raises:
        ValueError: If episodes < 1
        MinigameError: If the minigame is unknown
    """
    _, scores = evaluate_scores(params, arch, minigame, episodes, seed, episode_cap)
    stats = ScoreStats.from_scores(scores)
    logger.info(f"Evaluation on {minigame}: mean {stats.mean:.3f}, std {stats.std:.3f}, max {stats.max:.1f}")
    return stats
