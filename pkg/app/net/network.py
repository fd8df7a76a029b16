"""
Forward and backward passes of the dual-output policy network.

Outputs: state value V(s), a function-identifier distribution masked by the
observation's availability vector, and a spatial distribution over the N*N
screen pixels. A composite action's probability is the product of its
function probability and, for spatial functions, its pixel probability.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import logging

import numpy as np

from app.env.registry import FUNCTIONS
from app.env.types import Action, Observation
from app.net.architecture import ArchitectureSpec
from app.net.exceptions import ZeroProbabilityError
from app.numcore.exceptions import ConfigurationError, NumericalError
from app.numcore.layers import (
    conv2d_backward,
    conv2d_forward,
    entropy,
    entropy_gradient,
    fully_connected_backward,
    fully_connected_forward,
    log_prob_gradient,
    masked_log_softmax,
    masked_softmax,
    relu_backward,
    relu_forward,
)
from app.numcore.tensor import ParameterSet

logger = logging.getLogger(__name__)


@dataclass
class NetworkOutputs:
    """
    Value plus both policy heads for one observation.

    fn_probs is exactly 0 on unavailable functions. spatial_* vectors are
    indexed by row-major pixel (y * N + x).
    """

    value: float
    fn_logits: np.ndarray
    fn_log_probs: np.ndarray
    fn_probs: np.ndarray
    spatial_logits: np.ndarray
    spatial_log_probs: np.ndarray
    spatial_probs: np.ndarray
    available: np.ndarray
    cache: Dict = field(default_factory=dict, repr=False)

    @property
    def resolution(self) -> int:
        return int(round(np.sqrt(self.spatial_probs.size)))


class PolicyNetwork:
    """
    Stateless evaluator for one architecture; parameters are passed in.

    Workers share one PolicyNetwork and keep private ParameterSets.
    """

    def __init__(self, arch: ArchitectureSpec):
        self.arch = arch
        self.depth = len(arch.branch_layers)

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def _check_observation(self, obs: Observation) -> None:
        spec = self.arch.obs_spec
        n = spec.resolution
        expected = {
            "screen": (spec.screen_channels, n, n),
            "minimap": (spec.minimap_channels, n, n),
            "flat": (spec.flat_dim,),
            "available": (spec.num_functions,),
        }
        for name, shape in expected.items():
            actual = getattr(obs, name).shape
            if actual != shape:
                raise ConfigurationError(f"Observation {name} has shape {actual}, expected {shape}")

    def _branch_forward(self, params: ParameterSet, prefix: str, x: np.ndarray) -> Tuple[np.ndarray, List]:
        caches = []
        for index in range(1, self.depth + 1):
            pre, conv_cache = conv2d_forward(
                x, params[f"{prefix}.conv{index}.weight"].data, params[f"{prefix}.conv{index}.bias"].data
            )
            x, gate = relu_forward(pre)
            caches.append((conv_cache, gate))
        return x, caches

    def _head_forward(self, params: ParameterSet, head: str, shared: np.ndarray, cache: Dict) -> np.ndarray:
        hidden = shared
        if self.arch.head_fc:
            pre, cache[f"{head}.fc"] = fully_connected_forward(
                shared, params[f"{head}.fc.weight"].data, params[f"{head}.fc.bias"].data
            )
            hidden, cache[f"{head}.gate"] = relu_forward(pre)
        out, cache[f"{head}.out"] = fully_connected_forward(
            hidden, params[f"{head}.out.weight"].data, params[f"{head}.out.bias"].data
        )
        return out

    def forward(self, params: ParameterSet, obs: Observation) -> NetworkOutputs:
        """
        Evaluate the network on one observation.

        Runs in the parameters' precision (float32 for training, float64 for
        gradient checks).

        Raises:
            ConfigurationError: If the observation does not match the architecture
            NumericalError: If any output is non-finite
        """
        self._check_observation(obs)
        dtype = params.dtype
        n = self.arch.obs_spec.resolution
        cache: Dict = {}

        screen, cache["screen"] = self._branch_forward(params, "screen", obs.screen.astype(dtype))
        minimap, cache["minimap"] = self._branch_forward(params, "minimap", obs.minimap.astype(dtype))

        flat_pre, cache["flat.fc"] = fully_connected_forward(
            obs.flat.astype(dtype), params["flat.fc.weight"].data, params["flat.fc.bias"].data
        )
        flat, cache["flat.gate"] = relu_forward(flat_pre)

        broadcast = np.broadcast_to(flat[:, None, None], (flat.size, n, n))
        state = np.concatenate([screen, minimap, broadcast], axis=0)

        spatial_map, cache["spatial.conv"] = conv2d_forward(
            state, params["spatial.conv.weight"].data, params["spatial.conv.bias"].data
        )
        spatial_logits = spatial_map.reshape(-1)

        pooled = state.mean(axis=(1, 2))
        shared_pre, cache["shared.fc"] = fully_connected_forward(
            pooled, params["shared.fc.weight"].data, params["shared.fc.bias"].data
        )
        shared, cache["shared.gate"] = relu_forward(shared_pre)

        value = self._head_forward(params, "value", shared, cache)
        fn_logits = self._head_forward(params, "fn", shared, cache)

        available = np.asarray(obs.available, dtype=bool)
        outputs = NetworkOutputs(
            value=float(value[0]),
            fn_logits=fn_logits,
            fn_log_probs=masked_log_softmax(fn_logits, available),
            fn_probs=masked_softmax(fn_logits, available),
            spatial_logits=spatial_logits,
            spatial_log_probs=masked_log_softmax(spatial_logits),
            spatial_probs=masked_softmax(spatial_logits),
            available=available,
            cache=cache,
        )
        if not (np.isfinite(outputs.value) and np.all(np.isfinite(fn_logits)) and np.all(np.isfinite(spatial_logits))):
            raise NumericalError("Non-finite network output")
        return outputs

    # ------------------------------------------------------------------
    # Backward
    # ------------------------------------------------------------------

    def _accumulate(self, params: ParameterSet, prefix: str, dw: np.ndarray, db: np.ndarray) -> None:
        params[f"{prefix}.weight"].tensor.grad += dw
        params[f"{prefix}.bias"].tensor.grad += db

    def _head_backward(self, params: ParameterSet, head: str, dout: np.ndarray, cache: Dict) -> np.ndarray:
        dhidden, dw, db = fully_connected_backward(dout, cache[f"{head}.out"])
        self._accumulate(params, f"{head}.out", dw, db)
        if not self.arch.head_fc:
            return dhidden
        dpre = relu_backward(dhidden, cache[f"{head}.gate"])
        dshared, dw, db = fully_connected_backward(dpre, cache[f"{head}.fc"])
        self._accumulate(params, f"{head}.fc", dw, db)
        return dshared

    def _branch_backward(self, params: ParameterSet, prefix: str, dout: np.ndarray, caches: List) -> None:
        for index in range(self.depth, 0, -1):
            conv_cache, gate = caches[index - 1]
            dpre = relu_backward(dout, gate)
            dout, dw, db = conv2d_backward(dpre, conv_cache)
            self._accumulate(params, f"{prefix}.conv{index}", dw, db)

    def backward(
        self,
        params: ParameterSet,
        outputs: NetworkOutputs,
        d_value: float,
        d_fn_logits: np.ndarray,
        d_spatial_logits: np.ndarray,
    ) -> None:
        """
        Backpropagate loss derivatives w.r.t. the raw head outputs.

        Gradients are added into each parameter's grad buffer; callers zero
        them between accumulations.
        """
        cache = outputs.cache
        dtype = params.dtype
        n = self.arch.obs_spec.resolution
        branch_channels = self.arch.branch_channels

        # Masked function logits carry no gradient
        d_fn_logits = np.where(outputs.available, d_fn_logits, 0).astype(dtype)

        dshared = self._head_backward(params, "value", np.array([d_value], dtype=dtype), cache)
        dshared = dshared + self._head_backward(params, "fn", d_fn_logits, cache)

        dshared_pre = relu_backward(dshared, cache["shared.gate"])
        dpooled, dw, db = fully_connected_backward(dshared_pre, cache["shared.fc"])
        self._accumulate(params, "shared.fc", dw, db)

        dmap = np.asarray(d_spatial_logits, dtype=dtype).reshape(1, n, n)
        dstate, dw, db = conv2d_backward(dmap, cache["spatial.conv"])
        self._accumulate(params, "spatial.conv", dw, db)
        dstate = dstate + (dpooled / (n * n))[:, None, None]

        dscreen = dstate[:branch_channels]
        dminimap = dstate[branch_channels:2 * branch_channels]
        dflat = dstate[2 * branch_channels:].sum(axis=(1, 2))

        dflat_pre = relu_backward(dflat, cache["flat.gate"])
        _, dw, db = fully_connected_backward(dflat_pre, cache["flat.fc"])
        self._accumulate(params, "flat.fc", dw, db)

        self._branch_backward(params, "screen", dscreen, cache["screen"])
        self._branch_backward(params, "minimap", dminimap, cache["minimap"])

    def activation_pattern(self, outputs: NetworkOutputs) -> bytes:
        """Packed ReLU gates; identifies the linear region the forward pass ran in."""
        cache = outputs.cache
        gates = [gate for _, gate in cache["screen"]] + [gate for _, gate in cache["minimap"]]
        gates += [cache["flat.gate"], cache["shared.gate"]]
        if self.arch.head_fc:
            gates += [cache["value.gate"], cache["fn.gate"]]
        return np.packbits(np.concatenate([gate.ravel() for gate in gates])).tobytes()


# ----------------------------------------------------------------------
# Composite action distribution
# ----------------------------------------------------------------------


def forward(params: ParameterSet, arch: ArchitectureSpec, obs: Observation) -> NetworkOutputs:
    return PolicyNetwork(arch).forward(params, obs)


def log_prob(outputs: NetworkOutputs, action: Action) -> float:
    """
    log pi(a|s) = log p_fn[a0] + log p_spatial[pixel] (spatial functions only).

    Raises:
        ZeroProbabilityError: If the function is masked out
    """
    fn_term = outputs.fn_log_probs[action.function_id]
    if not np.isfinite(fn_term):
        raise ZeroProbabilityError(f"Function {action.name} has probability 0 in this state")
    total = float(fn_term)
    pixel = action.pixel_index(outputs.resolution)
    if pixel is not None:
        total += float(outputs.spatial_log_probs[pixel])
    return total


def log_prob_gradients(outputs: NetworkOutputs, action: Action) -> Tuple[np.ndarray, np.ndarray]:
    """d log pi(a|s) w.r.t. (function logits, spatial logits)."""
    d_fn = log_prob_gradient(outputs.fn_probs, action.function_id)
    pixel = action.pixel_index(outputs.resolution)
    if pixel is None:
        d_spatial = np.zeros_like(outputs.spatial_probs)
    else:
        d_spatial = log_prob_gradient(outputs.spatial_probs, pixel)
    return d_fn, d_spatial


def policy_entropy(outputs: NetworkOutputs) -> float:
    """Entropy of the function head plus entropy of the spatial head (nats)."""
    return function_entropy(outputs) + spatial_entropy(outputs)


def function_entropy(outputs: NetworkOutputs) -> float:
    return entropy(outputs.fn_probs, outputs.fn_log_probs)


def spatial_entropy(outputs: NetworkOutputs) -> float:
    return entropy(outputs.spatial_probs, outputs.spatial_log_probs)


def entropy_gradients(outputs: NetworkOutputs) -> Tuple[np.ndarray, np.ndarray]:
    """d policy_entropy w.r.t. (function logits, spatial logits)."""
    return (
        entropy_gradient(outputs.fn_probs, outputs.fn_log_probs),
        entropy_gradient(outputs.spatial_probs, outputs.spatial_log_probs),
    )


def sample_action(outputs: NetworkOutputs, rng: np.random.Generator) -> Action:
    """Draw a function id, then a pixel if that function is spatial."""
    function_id = int(rng.choice(outputs.fn_probs.size, p=_renormalized(outputs.fn_probs)))
    pixel: Optional[int] = None
    if FUNCTIONS[function_id].spatial:
        pixel = int(rng.choice(outputs.spatial_probs.size, p=_renormalized(outputs.spatial_probs)))
    return Action.from_pixel(function_id, pixel, outputs.resolution)


def greedy_action(outputs: NetworkOutputs) -> Action:
    """Mode of the function head, argmax pixel of the spatial head."""
    function_id = int(np.argmax(outputs.fn_probs))
    pixel = int(np.argmax(outputs.spatial_probs)) if FUNCTIONS[function_id].spatial else None
    return Action.from_pixel(function_id, pixel, outputs.resolution)


def _renormalized(probs: np.ndarray) -> np.ndarray:
    # rng.choice checks the sum in float64
    probs = probs.astype(np.float64)
    return probs / probs.sum()
