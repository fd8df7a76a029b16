"""
Gradient accumulation for the actor-critic objective.

For a rollout with returns R_i and advantages A_i = R_i - V(s_i):

    loss = sum_i [ -log pi(a_i|s_i) * A_i + value_coef * (R_i - V(s_i))^2 - beta * H(s_i) ]

A_i is a constant in the policy term; only the squared value error
differentiates through V.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
import logging

import numpy as np

from app.a3c.exceptions import GradientError
from app.a3c.returns import compute_returns
from app.a3c.rollout import Rollout
from app.env.types import Action
from app.net.network import (
    NetworkOutputs,
    PolicyNetwork,
    entropy_gradients,
    log_prob,
    log_prob_gradients,
    policy_entropy,
)
from app.numcore.gradcheck import LossEvaluation, Objective
from app.numcore.tensor import ParameterSet

logger = logging.getLogger(__name__)


@dataclass
class GradientSet:
    """Accumulated (and possibly clipped) gradients of one rollout."""

    grads: Dict[str, np.ndarray]
    norm: float
    clipped: bool
    steps: int
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0


def _head_derivatives(
    outputs: NetworkOutputs,
    action: Action,
    ret: float,
    advantage: float,
    entropy_coef: float,
    value_coef: float,
):
    d_fn_lp, d_spatial_lp = log_prob_gradients(outputs, action)
    d_fn = -advantage * d_fn_lp
    d_spatial = -advantage * d_spatial_lp
    if entropy_coef:
        d_fn_h, d_spatial_h = entropy_gradients(outputs)
        d_fn = d_fn - entropy_coef * d_fn_h
        d_spatial = d_spatial - entropy_coef * d_spatial_h
    d_value = -2.0 * value_coef * (ret - outputs.value)
    return d_value, d_fn, d_spatial


def backpropagate(
    network: PolicyNetwork,
    params: ParameterSet,
    outputs: Sequence[NetworkOutputs],
    actions: Sequence[Action],
    returns: Sequence[float],
    advantages: Sequence[float],
    entropy_coef: float,
    value_coef: float,
) -> None:
    """Add the objective's gradient for every step into params' grad buffers."""
    for out, action, ret, advantage in zip(outputs, actions, returns, advantages):
        d_value, d_fn, d_spatial = _head_derivatives(out, action, ret, advantage, entropy_coef, value_coef)
        network.backward(params, out, d_value, d_fn, d_spatial)


def objective_value(
    outputs: Sequence[NetworkOutputs],
    actions: Sequence[Action],
    returns: Sequence[float],
    advantages: Sequence[float],
    entropy_coef: float,
    value_coef: float,
):
    """(policy, value, entropy) sums of the objective; loss = policy + value - beta * entropy."""
    policy = value = total_entropy = 0.0
    for out, action, ret, advantage in zip(outputs, actions, returns, advantages):
        policy -= log_prob(out, action) * advantage
        value += value_coef * (ret - out.value) ** 2
        if entropy_coef:
            total_entropy += policy_entropy(out)
    return policy, value, total_entropy


def accumulate_gradients(
    rollout: Rollout,
    network: PolicyNetwork,
    params: ParameterSet,
    discount: float,
    entropy_coef: float,
    value_coef: float,
    grad_clip: Optional[float] = None,
) -> GradientSet:
    """
    Gradient of the actor-critic objective over a rollout.

    The rollout's cached forward passes must have been computed with params.

    Args:
        rollout: Transitions with cached network outputs
        network: Evaluator for the architecture
        params: Local parameters; their grad buffers are overwritten
        discount: Discount factor for the n-step returns
        entropy_coef: Entropy bonus weight (0 disables the term)
        value_coef: Weight of the squared value error
        grad_clip: Bound on the global gradient norm (None disables clipping)

    Returns:
        GradientSet with copies of the (clipped) gradients

    Raises:
        GradientError: If any accumulated gradient is non-finite
    """
    returns = compute_returns(rollout.rewards, rollout.terminal, rollout.bootstrap_value, discount)
    advantages = [ret - value for ret, value in zip(returns, rollout.values)]
    outputs = [t.outputs for t in rollout.transitions]
    actions = [t.action for t in rollout.transitions]

    params.zero_grad()
    backpropagate(network, params, outputs, actions, returns, advantages, entropy_coef, value_coef)

    norm = params.grad_norm()
    if not np.isfinite(norm):
        bad = [p.name for p in params if not np.all(np.isfinite(p.grad))]
        raise GradientError(
            f"Non-finite gradients in {bad} for a {len(rollout)}-step rollout: "
            f"rewards={rollout.rewards}, values={[round(v, 4) for v in rollout.values]}, "
            f"returns={[round(r, 4) for r in returns]}, terminal={rollout.terminal}"
        )

    clipped = grad_clip is not None and norm > grad_clip
    if clipped:
        scale = grad_clip / norm
        for param in params:
            param.tensor.grad *= scale
        logger.debug(f"Gradient norm {norm:.3f} clipped to {grad_clip}")

    policy_loss = -sum(t.log_prob * a for t, a in zip(rollout.transitions, advantages))
    value_loss = value_coef * sum(a * a for a in advantages)
    return GradientSet(
        grads={p.name: p.grad.copy() for p in params},
        norm=norm,
        clipped=clipped,
        steps=len(rollout),
        policy_loss=float(policy_loss),
        value_loss=float(value_loss),
        entropy=float(sum(t.entropy for t in rollout.transitions)),
    )


def rollout_objective(
    rollout: Rollout,
    network: PolicyNetwork,
    params: ParameterSet,
    discount: float,
    entropy_coef: float,
    value_coef: float,
) -> Objective:
    """
    The rollout's loss as a function of params, for gradient checking.

    Returns and advantages are frozen at the values implied by the rollout, so
    the loss matches what accumulate_gradients differentiates.
    """
    returns = compute_returns(rollout.rewards, rollout.terminal, rollout.bootstrap_value, discount)
    advantages = [ret - value for ret, value in zip(returns, rollout.values)]
    observations = [t.observation for t in rollout.transitions]
    actions = [t.action for t in rollout.transitions]

    def objective(with_grads: bool) -> LossEvaluation:
        outputs: List[NetworkOutputs] = [network.forward(params, obs) for obs in observations]
        policy, value, total_entropy = objective_value(
            outputs, actions, returns, advantages, entropy_coef, value_coef
        )
        grads = None
        if with_grads:
            params.zero_grad()
            backpropagate(network, params, outputs, actions, returns, advantages, entropy_coef, value_coef)
            grads = {p.name: p.grad.copy() for p in params}
        pattern = b"".join(network.activation_pattern(out) for out in outputs)
        return LossEvaluation(policy + value - entropy_coef * total_entropy, grads, pattern)

    return objective
