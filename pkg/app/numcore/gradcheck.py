"""
Finite-difference verification of hand-written backward passes.
"""
from dataclasses import dataclass
from typing import Callable, Dict, NamedTuple, Optional
import logging

import numpy as np

from app.numcore.exceptions import ConfigurationError, NumericalError
from app.numcore.tensor import CHECK_DTYPE, ParameterSet

logger = logging.getLogger(__name__)


class LossEvaluation(NamedTuple):
    """
    Result of evaluating a scalar objective.

    grads is only filled when the objective was asked for gradients.
    activation_pattern identifies the piecewise-linear region (ReLU gates);
    a perturbation that changes it straddles a kink and is not comparable.
    """

    loss: float
    grads: Optional[Dict[str, np.ndarray]] = None
    activation_pattern: Optional[bytes] = None


# objective(with_grads) evaluates the loss at the parameters' current values
Objective = Callable[[bool], LossEvaluation]


@dataclass
class GradientCheckReport:
    """Outcome of a gradient check."""

    max_relative_error: float
    checked: int
    skipped: int
    worst: Optional[str] = None


def relative_error(analytic, numeric):
    """|a - n| / max(|a|, |n|, 1e-8), elementwise."""
    analytic = np.asarray(analytic, dtype=CHECK_DTYPE)
    numeric = np.asarray(numeric, dtype=CHECK_DTYPE)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / scale


def _evaluate(objective: Objective, with_grads: bool) -> LossEvaluation:
    result = objective(with_grads)
    if not np.isfinite(result.loss):
        raise NumericalError(f"Objective returned non-finite loss: {result.loss}")
    return result


def gradient_check(
    objective: Objective,
    params: ParameterSet,
    epsilon: float = 1e-4,
    samples_per_tensor: Optional[int] = None,
    seed: int = 0,
) -> GradientCheckReport:
    """
    Compare analytic gradients against central differences, scalar by scalar.

    Args:
        objective: Callable evaluating the loss at the current parameter values
        params: Parameters the objective reads; perturbed in place and restored
        epsilon: Perturbation size
        samples_per_tensor: Check only this many random scalars per tensor
            (None checks every scalar)
        seed: Seed for choosing sampled scalars

    Returns:
        GradientCheckReport with the maximum relative error over checked scalars

    Raises:
        ConfigurationError: If parameters are not in the 64-bit evaluation path
        NumericalError: If the objective is non-finite
    """
    if params.dtype != CHECK_DTYPE:
        raise ConfigurationError(f"Gradient checks need {CHECK_DTYPE.__name__} parameters, got {params.dtype}")

    base = _evaluate(objective, with_grads=True)
    analytic = {name: grad.copy() for name, grad in base.grads.items()}
    rng = np.random.default_rng(seed)

    max_error = 0.0
    worst = None
    checked = 0
    skipped = 0

    for param in params:
        data = param.data
        flat_indices = np.arange(data.size)
        if samples_per_tensor is not None and data.size > samples_per_tensor:
            flat_indices = rng.choice(data.size, size=samples_per_tensor, replace=False)

        for flat in flat_indices:
            index = np.unravel_index(int(flat), data.shape)
            original = data[index]

            data[index] = original + epsilon
            plus = _evaluate(objective, with_grads=False)
            data[index] = original - epsilon
            minus = _evaluate(objective, with_grads=False)
            data[index] = original

            if base.activation_pattern is not None and (
                plus.activation_pattern != base.activation_pattern
                or minus.activation_pattern != base.activation_pattern
            ):
                skipped += 1
                continue

            numeric = (plus.loss - minus.loss) / (2 * epsilon)
            error = float(relative_error(analytic[param.name][index], numeric))
            checked += 1
            if error > max_error:
                max_error = error
                worst = f"{param.name}{list(index)}"

    logger.debug(f"Gradient check: max error {max_error:.3e} at {worst}, checked {checked}, skipped {skipped}")
    return GradientCheckReport(max_relative_error=max_error, checked=checked, skipped=skipped, worst=worst)
