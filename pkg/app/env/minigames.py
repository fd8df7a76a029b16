"""
Grid minigames mirroring the feature-layer observation and composite action model.

Every minigame shares one layout:
- screen: own units, targets (beacon / shards / enemies), selected units
- minimap: own units, explored area
- flat: selected fraction, elapsed step fraction

Units move one cell per step (Chebyshev) toward the destination set by the
last spatial order.
"""
from typing import Dict, List, Optional, Type
import logging

import numpy as np

from app.config import EnvConfig
from app.env.exceptions import InvalidActionError, MinigameError
from app.env.registry import (
    ATTACK_SCREEN,
    MOVE_CAMERA,
    MOVE_SCREEN,
    NO_OP,
    NUM_FUNCTIONS,
    SELECT_ALL,
    SELECT_UNIT_1,
    SELECT_UNIT_2,
)
from app.env.types import Action, Observation, ObservationSpec, StepResult

logger = logging.getLogger(__name__)


def chebyshev(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.max(np.abs(np.asarray(a) - np.asarray(b)), axis=-1)


class Minigame:
    """
    Base class holding units, selection and orders.

    Subclasses place their objects in _setup(), score a step in _resolve()
    and draw their target layer in _target_layer().
    """

    name: str = ""
    num_units: int = 1
    uses_camera: bool = False

    def __init__(self, resolution: int = EnvConfig.RESOLUTION, episode_cap: int = EnvConfig.EPISODE_CAP):
        if not EnvConfig.MIN_RESOLUTION <= resolution <= EnvConfig.MAX_RESOLUTION:
            raise MinigameError(
                f"Resolution must be in [{EnvConfig.MIN_RESOLUTION}, {EnvConfig.MAX_RESOLUTION}], got {resolution}"
            )
        if episode_cap < 1:
            raise MinigameError(f"Episode cap must be positive, got {episode_cap}")

        self.resolution = resolution
        self.episode_cap = episode_cap
        self.world_size = resolution
        self.spec = ObservationSpec(resolution=resolution)

        # Lifetime count of unavailable actions coerced to no_op
        self.unavailable_actions = 0

        self._rng: Optional[np.random.Generator] = None
        self._done = True
        self.step_count = 0
        self.score = 0.0
        self.units = np.zeros((self.num_units, 2), dtype=np.int64)
        self.destinations = np.zeros_like(self.units)
        self.attacking = np.zeros(self.num_units, dtype=bool)
        self.selected = np.zeros(self.num_units, dtype=bool)
        self.camera = np.zeros(2, dtype=np.int64)  # world offset of the screen window

    # ------------------------------------------------------------------
    # Episode lifecycle
    # ------------------------------------------------------------------

    def reset(self, seed: int) -> Observation:
        """Start a new episode; the initial state is a deterministic function of seed."""
        self._rng = np.random.default_rng(seed)
        self._done = False
        self.step_count = 0
        self.score = 0.0
        self.selected = np.zeros(self.num_units, dtype=bool)
        self.attacking = np.zeros(self.num_units, dtype=bool)
        self.camera = np.zeros(2, dtype=np.int64)
        self._setup()
        self.destinations = self.units.copy()
        return self.observe()

    @property
    def done(self) -> bool:
        return self._done

    def step(self, action: Action) -> StepResult:
        """
        Apply one decision step.

        Raises:
            MinigameError: If the episode is over (call reset() first)
            InvalidActionError: If the spatial argument is out of bounds
        """
        if self._done:
            raise MinigameError("Episode has ended; call reset() before step()")
        self._check_bounds(action)

        if not self.available_actions()[action.function_id]:
            self.unavailable_actions += 1
            logger.warning(f"{self.name}: unavailable action {action.name} treated as no_op")
            action = Action(NO_OP)

        self._apply(action)
        self._advance_units()
        reward = float(self._resolve())

        self.step_count += 1
        self.score += reward
        self._done = self.step_count >= self.episode_cap or self._objective_exhausted()
        return StepResult(
            observation=self.observe(),
            reward=reward,
            done=self._done,
            episode_score=self.score,
        )

    def available_actions(self) -> np.ndarray:
        """no_op and selections always; screen orders need a selection; camera only with a camera."""
        available = np.zeros(NUM_FUNCTIONS, dtype=bool)
        available[[NO_OP, SELECT_ALL, SELECT_UNIT_1, SELECT_UNIT_2]] = True
        if self.selected.any():
            available[MOVE_SCREEN] = True
            available[ATTACK_SCREEN] = True
        available[MOVE_CAMERA] = self.uses_camera
        return available

    # ------------------------------------------------------------------
    # Dynamics
    # ------------------------------------------------------------------

    def _check_bounds(self, action: Action) -> None:
        if action.spatial_arg is None:
            return
        x, y = action.spatial_arg
        if not (0 <= x < self.resolution and 0 <= y < self.resolution):
            raise InvalidActionError(
                f"Spatial argument {action.spatial_arg} outside [0, {self.resolution})^2"
            )

    def screen_to_world(self, x: int, y: int) -> np.ndarray:
        return np.array([x, y], dtype=np.int64) + self.camera

    def _apply(self, action: Action) -> None:
        fid = action.function_id
        if fid == SELECT_ALL:
            self.selected[:] = True
        elif fid in (SELECT_UNIT_1, SELECT_UNIT_2):
            index = fid - SELECT_UNIT_1
            self.selected[:] = False
            if index < self.num_units:
                self.selected[index] = True
        elif fid in (MOVE_SCREEN, ATTACK_SCREEN):
            target = self.screen_to_world(*action.spatial_arg)
            self.destinations[self.selected] = target
            self.attacking[self.selected] = fid == ATTACK_SCREEN
            self._on_order(fid, target)
        elif fid == MOVE_CAMERA:
            self._move_camera(*action.spatial_arg)

    def _on_order(self, function_id: int, target: np.ndarray) -> None:
        pass

    def _move_camera(self, x: int, y: int) -> None:
        pass

    def _advance_units(self) -> None:
        self.units += np.sign(self.destinations - self.units)

    def _random_cells(self, count: int, exclude: Optional[np.ndarray] = None) -> np.ndarray:
        """Distinct uniformly random world cells, avoiding the excluded positions."""
        occupied = np.zeros((self.world_size, self.world_size), dtype=bool)
        if exclude is not None and len(exclude):
            exclude = np.asarray(exclude).reshape(-1, 2)
            occupied[exclude[:, 1], exclude[:, 0]] = True
        free = np.flatnonzero(~occupied.ravel())
        if len(free) < count:
            raise MinigameError(f"{self.name}: cannot place {count} objects on a {self.world_size} grid")
        chosen = self._rng.choice(free, size=count, replace=False)
        return np.stack([chosen % self.world_size, chosen // self.world_size], axis=1).astype(np.int64)

    # ------------------------------------------------------------------
    # Observation
    # ------------------------------------------------------------------

    def observe(self) -> Observation:
        n = self.resolution
        screen = np.zeros((self.spec.screen_channels, n, n), dtype=np.float32)
        minimap = np.zeros((self.spec.minimap_channels, n, n), dtype=np.float32)

        for index, (wx, wy) in enumerate(self.units):
            sx, sy = wx - self.camera[0], wy - self.camera[1]
            if 0 <= sx < n and 0 <= sy < n:
                screen[0, sy, sx] = 1.0
                if self.selected[index]:
                    screen[2, sy, sx] = 1.0
            scale = self.world_size // n
            minimap[0, wy // scale, wx // scale] = 1.0

        targets = self._target_layer()
        cx, cy = self.camera
        screen[1] = targets[cy:cy + n, cx:cx + n]
        minimap[1] = self._explored_layer()

        flat = np.array(
            [self.selected.sum() / self.num_units, self.step_count / self.episode_cap],
            dtype=np.float32,
        )
        return Observation(screen=screen, minimap=minimap, flat=flat, available=self.available_actions())

    def _explored_layer(self) -> np.ndarray:
        return np.ones((self.resolution, self.resolution), dtype=np.float32)

    # ------------------------------------------------------------------
    # Subclass hooks
    # ------------------------------------------------------------------

    def _setup(self) -> None:
        raise NotImplementedError

    def _resolve(self) -> float:
        raise NotImplementedError

    def _target_layer(self) -> np.ndarray:
        raise NotImplementedError

    def _objective_exhausted(self) -> bool:
        return False


class BeaconGame(Minigame):
    """One unit, one beacon; +1 on reaching the beacon, which then respawns elsewhere."""

    name = "beacon"
    num_units = 1

    def _setup(self) -> None:
        self.units = self._random_cells(1)
        self.beacon = self._random_cells(1, exclude=self.units)[0]

    def _resolve(self) -> float:
        if np.array_equal(self.units[0], self.beacon):
            self.beacon = self._random_cells(1, exclude=self.units)[0]
            return 1.0
        return 0.0

    def _target_layer(self) -> np.ndarray:
        layer = np.zeros((self.world_size, self.world_size), dtype=np.float32)
        layer[self.beacon[1], self.beacon[0]] = 1.0
        return layer


class ShardsGame(Minigame):
    """
    Two units collect shards; a unit entering a shard cell collects it (+1).

    Shards spawn in batches, spaced at least SHARD_SPACING apart from each
    other and from the units. A new batch appears once the last shard of the
    previous one is collected.
    """

    name = "shards"
    num_units = 2

    def __init__(self, resolution: int = EnvConfig.RESOLUTION, episode_cap: int = EnvConfig.EPISODE_CAP,
                 num_shards: int = EnvConfig.NUM_SHARDS):
        super().__init__(resolution, episode_cap)
        # Greedy placement always succeeds while every placed object blocks at most this many cells
        block = (2 * EnvConfig.SHARD_SPACING - 1) ** 2
        capacity = (resolution * resolution - block * self.num_units) // block
        if num_shards > capacity:
            logger.warning(f"shards: {num_shards} shards do not fit a {resolution} grid, using {capacity}")
            num_shards = capacity
        self.num_shards = num_shards
        self.shards = np.zeros((0, 2), dtype=np.int64)
        self.collected_in_batch = 0

    def _setup(self) -> None:
        self.units = self._random_cells(self.num_units)
        self._spawn_batch()

    def _spawn_batch(self) -> None:
        order = self._rng.permutation(self.world_size * self.world_size)
        cells = np.stack([order % self.world_size, order // self.world_size], axis=1)
        placed: List[np.ndarray] = []
        for cell in cells:
            blockers = list(self.units) + placed
            if np.all(chebyshev(np.asarray(blockers), cell) >= EnvConfig.SHARD_SPACING):
                placed.append(cell)
                if len(placed) == self.num_shards:
                    break
        if len(placed) < self.num_shards:
            raise MinigameError(f"shards: could only place {len(placed)} of {self.num_shards} shards")
        self.shards = np.asarray(placed, dtype=np.int64)
        self.collected_in_batch = 0

    def _resolve(self) -> float:
        reward = 0.0
        for unit in self.units:
            if len(self.shards) == 0:
                break
            hit = np.flatnonzero(np.all(self.shards == unit, axis=1))
            if hit.size:
                self.shards = np.delete(self.shards, hit[0], axis=0)
                self.collected_in_batch += 1
                reward += 1.0
        if len(self.shards) == 0:
            self._spawn_batch()
        return reward

    def _target_layer(self) -> np.ndarray:
        layer = np.zeros((self.world_size, self.world_size), dtype=np.float32)
        if len(self.shards):
            layer[self.shards[:, 1], self.shards[:, 0]] = 1.0
        return layer


class HuntGame(Minigame):
    """
    Find and destroy stationary targets in a world twice the screen size.

    The screen shows a camera window; move_camera pans it (minimap
    coordinates). Units on attack orders destroy one target within range per
    step. The episode ends early when every target is destroyed.
    """

    name = "hunt"
    num_units = EnvConfig.NUM_HUNT_UNITS
    uses_camera = True

    def __init__(self, resolution: int = EnvConfig.RESOLUTION, episode_cap: int = EnvConfig.EPISODE_CAP,
                 num_targets: int = EnvConfig.NUM_HUNT_TARGETS):
        super().__init__(resolution, episode_cap)
        self.world_size = 2 * resolution
        self.num_targets = num_targets
        self.targets = np.zeros((0, 2), dtype=np.int64)
        self.alive = np.zeros(0, dtype=bool)
        self.explored = np.zeros((resolution, resolution), dtype=bool)

    def _setup(self) -> None:
        n = self.resolution
        self.camera = self._rng.integers(0, n + 1, size=2).astype(np.int64)
        local = self._rng.choice(n * n, size=self.num_units, replace=False)
        self.units = np.stack([local % n, local // n], axis=1).astype(np.int64) + self.camera
        self.targets = self._random_cells(self.num_targets, exclude=self.units)
        self.alive = np.ones(self.num_targets, dtype=bool)
        self.explored = np.zeros((n, n), dtype=bool)
        self._mark_explored()

    def _move_camera(self, x: int, y: int) -> None:
        n = self.resolution
        center = np.array([2 * x + 1, 2 * y + 1], dtype=np.int64)
        self.camera = np.clip(center - n // 2, 0, n)
        self._mark_explored()

    def _mark_explored(self) -> None:
        n = self.resolution
        x0, y0 = self.camera // 2
        x1, y1 = (self.camera + n - 1) // 2
        self.explored[y0:y1 + 1, x0:x1 + 1] = True

    @property
    def explored_fraction(self) -> float:
        return float(self.explored.mean())

    def _resolve(self) -> float:
        attackers = self.units[self.attacking]
        if attackers.size == 0 or not self.alive.any():
            return 0.0
        living = np.flatnonzero(self.alive)
        distances = np.array([chebyshev(attackers, self.targets[i]).min() for i in living])
        in_range = living[distances <= EnvConfig.ATTACK_RANGE]
        if in_range.size == 0:
            return 0.0
        self.alive[in_range[0]] = False
        return 1.0

    def _target_layer(self) -> np.ndarray:
        layer = np.zeros((self.world_size, self.world_size), dtype=np.float32)
        living = self.targets[self.alive]
        if len(living):
            layer[living[:, 1], living[:, 0]] = 1.0
        return layer

    def _explored_layer(self) -> np.ndarray:
        return self.explored.astype(np.float32)

    def _objective_exhausted(self) -> bool:
        return not self.alive.any()


class SkirmishGame(Minigame):
    """
    Three units fight four stationary enemies with hit points.

    Each step the squad focuses the weakest enemy within range of any
    attacking unit; every attacking unit in range of it deals 1 damage.
    Destroying an enemy scores +1; a new batch spawns when all are down.
    """

    name = "skirmish"
    num_units = EnvConfig.NUM_SKIRMISH_UNITS

    def __init__(self, resolution: int = EnvConfig.RESOLUTION, episode_cap: int = EnvConfig.EPISODE_CAP,
                 num_enemies: int = EnvConfig.NUM_SKIRMISH_ENEMIES, enemy_hp: int = EnvConfig.SKIRMISH_ENEMY_HP):
        super().__init__(resolution, episode_cap)
        self.num_enemies = num_enemies
        self.enemy_hp = enemy_hp
        self.enemies = np.zeros((0, 2), dtype=np.int64)
        self.hit_points = np.zeros(0, dtype=np.int64)

    def _setup(self) -> None:
        self.units = self._random_cells(self.num_units)
        self._spawn_batch()

    def _spawn_batch(self) -> None:
        self.enemies = self._random_cells(self.num_enemies, exclude=self.units)
        self.hit_points = np.full(self.num_enemies, self.enemy_hp, dtype=np.int64)

    def _resolve(self) -> float:
        attackers = self.units[self.attacking]
        living = np.flatnonzero(self.hit_points > 0)
        if attackers.size == 0 or living.size == 0:
            return 0.0
        distances = np.stack([chebyshev(attackers, self.enemies[i]) for i in living])
        reachable = living[distances.min(axis=1) <= EnvConfig.ATTACK_RANGE]
        if reachable.size == 0:
            return 0.0
        focus = reachable[np.argmin(self.hit_points[reachable])]
        damage = int(np.sum(chebyshev(attackers, self.enemies[focus]) <= EnvConfig.ATTACK_RANGE))
        self.hit_points[focus] = max(0, self.hit_points[focus] - damage)
        if self.hit_points[focus] > 0:
            return 0.0
        if not (self.hit_points > 0).any():
            self._spawn_batch()
        return 1.0

    def _target_layer(self) -> np.ndarray:
        layer = np.zeros((self.world_size, self.world_size), dtype=np.float32)
        for (x, y), hp in zip(self.enemies, self.hit_points):
            if hp > 0:
                layer[y, x] = hp / self.enemy_hp
        return layer


MINIGAMES: Dict[str, Type[Minigame]] = {
    "beacon": BeaconGame,
    "shards": ShardsGame,
    "hunt": HuntGame,
    "skirmish": SkirmishGame,
}


def make_minigame(name: str, resolution: int = EnvConfig.RESOLUTION,
                  episode_cap: int = EnvConfig.EPISODE_CAP) -> Minigame:
    """
    Create a minigame by name.

    Raises:
        MinigameError: If the name is unknown
    """
    try:
        game_cls = MINIGAMES[name]
    except KeyError:
        raise MinigameError(f"Unknown minigame: {name}. Available: {sorted(MINIGAMES)}") from None
    return game_cls(resolution=resolution, episode_cap=episode_cap)


def reset(minigame: str, seed: int, resolution: int = EnvConfig.RESOLUTION) -> Observation:
    """Convenience: build a minigame and return its initial observation."""
    return make_minigame(minigame, resolution).reset(seed)
