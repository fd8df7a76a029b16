"""
n-step discounted returns.
"""
from typing import List, Sequence

import numpy as np


def compute_returns(rewards: Sequence[float], terminal: bool, bootstrap_value: float, discount: float) -> List[float]:
    """
    Discounted returns for a rollout, computed backwards from its last step.

    R_i = r_i + discount * R_{i+1}, seeded with bootstrap_value for a
    segment cut by t_max, or 0 when the segment ended the episode.

    Args:
        rewards: Rewards r_0 .. r_{n-1} of the rollout
        terminal: Whether the last transition ended the episode
        bootstrap_value: V(s_n) of the state after the last transition
        discount: Discount factor in [0, 1]

    Returns:
        List of returns, one per reward
    """
    running = 0.0 if terminal else float(bootstrap_value)
    returns = np.zeros(len(rewards), dtype=np.float64)
    for i in range(len(rewards) - 1, -1, -1):
        running = float(rewards[i]) + discount * running
        returns[i] = running
    return returns.tolist()
