"""
Scripted and random policies used as benchmark anchors.

Scripted controllers read the game state directly; the random policy only
looks at the observation's availability mask.
"""
from typing import Callable, List, Optional
import logging

import numpy as np

from app.env.exceptions import MinigameError
from app.env.minigames import BeaconGame, Minigame, ShardsGame, SkirmishGame, chebyshev
from app.env.registry import (
    ATTACK_SCREEN,
    FUNCTIONS,
    MOVE_SCREEN,
    NO_OP,
    SELECT_ALL,
    SELECT_UNIT_1,
)
from app.env.types import Action, Observation, ScoreStats, episode_seeds

logger = logging.getLogger(__name__)


class Policy:
    """Maps (observation, game) to an action. reset() is called at episode start."""

    def reset(self) -> None:
        pass

    def __call__(self, observation: Observation, game: Minigame) -> Action:
        raise NotImplementedError


def sample_available_action(available: np.ndarray, resolution: int, rng: np.random.Generator) -> Action:
    """Uniform over available function ids, uniform pixel for spatial ones."""
    function_id = int(rng.choice(np.flatnonzero(available)))
    if FUNCTIONS[function_id].spatial:
        pixel = int(rng.integers(resolution * resolution))
        return Action.from_pixel(function_id, pixel, resolution)
    return Action(function_id)


class RandomPolicy(Policy):
    """Uniformly random legal actions."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def __call__(self, observation: Observation, game: Minigame) -> Action:
        resolution = observation.screen.shape[-1]
        return sample_available_action(observation.available, resolution, self._rng)


def _screen_arg(game: Minigame, world: np.ndarray):
    x, y = np.asarray(world) - game.camera
    return int(x), int(y)


class BeaconOracle(Policy):
    """Select the unit, then move straight to the beacon."""

    def __call__(self, observation: Observation, game: BeaconGame) -> Action:
        if not game.selected.any():
            return Action(SELECT_ALL)
        return Action(MOVE_SCREEN, _screen_arg(game, game.beacon))


class ShardsOracle(Policy):
    """
    Split the two units: each heads for its nearest shard that the other unit
    is not already heading for. Re-targeting a unit costs a selection step.
    """

    def reset(self) -> None:
        self._targets: List[Optional[np.ndarray]] = [None, None]

    def __init__(self):
        self.reset()

    def _needs_order(self, game: ShardsGame, unit: int) -> bool:
        target = self._targets[unit]
        if target is None:
            return True
        return not np.any(np.all(game.shards == target, axis=1))

    def _choose(self, game: ShardsGame, unit: int) -> np.ndarray:
        other = self._targets[1 - unit]
        candidates = game.shards
        if other is not None and len(candidates) > 1:
            candidates = candidates[~np.all(candidates == other, axis=1)]
        distances = chebyshev(candidates, game.units[unit])
        return candidates[int(np.argmin(distances))]

    def __call__(self, observation: Observation, game: ShardsGame) -> Action:
        needing = [unit for unit in range(game.num_units) if self._needs_order(game, unit)]
        if not needing:
            return Action(NO_OP)
        selected = np.flatnonzero(game.selected)
        if len(selected) == 1 and selected[0] in needing:
            unit = int(selected[0])
            self._targets[unit] = self._choose(game, unit)
            return Action(MOVE_SCREEN, _screen_arg(game, self._targets[unit]))
        return Action(SELECT_UNIT_1 + needing[0])


class ShardsTogetherPolicy(Policy):
    """Both units move as one group to the shard nearest the first unit."""

    def reset(self) -> None:
        self._target: Optional[np.ndarray] = None

    def __init__(self):
        self.reset()

    def __call__(self, observation: Observation, game: ShardsGame) -> Action:
        if not game.selected.all():
            return Action(SELECT_ALL)
        if self._target is not None and np.any(np.all(game.shards == self._target, axis=1)):
            return Action(NO_OP)
        distances = chebyshev(game.shards, game.units[0])
        self._target = game.shards[int(np.argmin(distances))]
        return Action(MOVE_SCREEN, _screen_arg(game, self._target))


class SkirmishOracle(Policy):
    """Select everyone and attack the living enemy nearest the squad centroid."""

    def reset(self) -> None:
        self._target: Optional[np.ndarray] = None

    def __init__(self):
        self.reset()

    def _target_alive(self, game: SkirmishGame) -> bool:
        if self._target is None:
            return False
        living = game.enemies[game.hit_points > 0]
        return bool(np.any(np.all(living == self._target, axis=1)))

    def __call__(self, observation: Observation, game: SkirmishGame) -> Action:
        if not game.selected.all():
            return Action(SELECT_ALL)
        if self._target_alive(game) and game.attacking.all():
            return Action(NO_OP)
        living = game.enemies[game.hit_points > 0]
        centroid = game.units.mean(axis=0)
        distances = np.max(np.abs(living - centroid), axis=1)
        self._target = living[int(np.argmin(distances))]
        return Action(ATTACK_SCREEN, _screen_arg(game, self._target))


ORACLES = {
    "beacon": BeaconOracle,
    "shards": ShardsOracle,
    "skirmish": SkirmishOracle,
}


def oracle_policy(minigame: str) -> Policy:
    """
    Scripted near-optimal controller for a minigame.

    Raises:
        MinigameError: For hunt (exploration-dependent, no oracle) or unknown names
    """
    if minigame == "hunt":
        raise MinigameError("hunt has no oracle policy: its score depends on exploration")
    try:
        return ORACLES[minigame]()
    except KeyError:
        raise MinigameError(f"Unknown minigame: {minigame}") from None


def random_policy(seed: int = 0) -> Policy:
    return RandomPolicy(seed)


def run_episode(game: Minigame, policy: Callable[[Observation, Minigame], Action], seed: int) -> float:
    """Play one episode to completion and return its score."""
    observation = game.reset(seed)
    if isinstance(policy, Policy):
        policy.reset()
    done = False
    while not done:
        result = game.step(policy(observation, game))
        observation, done = result.observation, result.done
    return game.score


def simulate(game: Minigame, policy: Policy, episodes: int, seed: int) -> ScoreStats:
    """Score a policy over episodes reset from seeds derived from one run seed."""
    scores = [run_episode(game, policy, s) for s in episode_seeds(seed, episodes)]
    stats = ScoreStats.from_scores(scores)
    logger.info(f"{game.name}: {type(policy).__name__} mean {stats.mean:.3f} over {episodes} episodes")
    return stats
