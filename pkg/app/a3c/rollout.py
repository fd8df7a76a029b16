"""
Rollout collection: the inner loop of each actor-learner.
"""
from dataclasses import dataclass, field
from typing import List, Optional
import logging

import numpy as np

from app.env.minigames import Minigame
from app.env.policies import sample_available_action
from app.env.types import Action, Observation
from app.net.network import NetworkOutputs, PolicyNetwork, log_prob, policy_entropy, sample_action
from app.numcore.tensor import ParameterSet

logger = logging.getLogger(__name__)


@dataclass
class Transition:
    observation: Observation
    action: Action
    reward: float
    log_prob: float
    value: float
    entropy: float
    outputs: NetworkOutputs = field(repr=False)


@dataclass
class Rollout:
    """
    Up to t_max consecutive transitions of one episode.

    bootstrap_value is V of the state after the last transition, or 0 when
    that transition ended the episode. episode_score is set only then.
    """

    transitions: List[Transition]
    bootstrap_value: float
    terminal: bool
    episode_score: Optional[float] = None

    def __post_init__(self):
        if not self.transitions:
            raise ValueError("A rollout needs at least one transition")
        if self.terminal and self.bootstrap_value != 0.0:
            raise ValueError("Terminal rollouts bootstrap from 0")

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def rewards(self) -> List[float]:
        return [t.reward for t in self.transitions]

    @property
    def values(self) -> List[float]:
        return [t.value for t in self.transitions]


def episode_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def collect_rollout(
    env: Minigame,
    network: PolicyNetwork,
    params: ParameterSet,
    t_max: int,
    epsilon: float,
    rng: np.random.Generator,
) -> Rollout:
    """
    Act for up to t_max steps with epsilon-greedy exploration over the policy.

    A finished (or never started) environment is reset with a seed drawn from
    rng, so a worker's episodes continue across consecutive calls.

    Args:
        env: The worker's private minigame
        network: Evaluator for the worker's architecture
        params: Freshly synchronized local parameters
        t_max: Maximum number of transitions
        epsilon: Probability of a uniformly random available action
        rng: The worker's generator (exploration, sampling, episode seeds)

    Returns:
        Rollout that stops at the episode end or after t_max steps
    """
    if env.done:
        env.reset(episode_seed(rng))
    observation = env.observe()
    resolution = env.resolution

    transitions: List[Transition] = []
    terminal = False
    while len(transitions) < t_max:
        outputs = network.forward(params, observation)
        if rng.random() < epsilon:
            action = sample_available_action(observation.available, resolution, rng)
        else:
            action = sample_action(outputs, rng)

        result = env.step(action)
        transitions.append(Transition(
            observation=observation,
            action=action,
            reward=result.reward,
            log_prob=log_prob(outputs, action),
            value=outputs.value,
            entropy=policy_entropy(outputs),
            outputs=outputs,
        ))
        observation = result.observation
        if result.done:
            terminal = True
            break

    if terminal:
        return Rollout(transitions, bootstrap_value=0.0, terminal=True, episode_score=env.score)
    bootstrap = network.forward(params, observation).value
    return Rollout(transitions, bootstrap_value=float(bootstrap), terminal=False)
