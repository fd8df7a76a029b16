"""
Architecture variants and parameter construction.

All three variants share the branch-then-concatenate topology: screen and
minimap conv branches, a flat FC branch broadcast over the grid, a 1x1 conv
spatial head on the concatenated state, and value / function heads on a shared
FC over the mean-pooled state. PlusFC adds a 128-unit FC in front of the value
and function outputs; PlusConv uses a deeper conv stack per branch.
"""
from collections import OrderedDict
from typing import Dict, List, Literal, Tuple
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.config import NetworkConfig
from app.env.types import ObservationSpec
from app.numcore.tensor import TRAIN_DTYPE, Parameter, ParameterSet, Tensor

logger = logging.getLogger(__name__)

Variant = Literal["baseline", "plusfc", "plusconv"]


class ArchitectureSpec(BaseModel):
    """Network variant plus the observation shapes it consumes."""

    model_config = ConfigDict(frozen=True)

    variant: Variant = Field("baseline", description="One of baseline, plusfc, plusconv")
    obs_spec: ObservationSpec = Field(default_factory=ObservationSpec)

    @property
    def branch_layers(self) -> List[Tuple[int, int]]:
        return NetworkConfig.BRANCH_LAYERS[self.variant]

    @property
    def branch_channels(self) -> int:
        return self.branch_layers[-1][0]

    @property
    def state_channels(self) -> int:
        """Channels of the concatenated state: two conv branches plus the broadcast flat features."""
        return 2 * self.branch_channels + NetworkConfig.FLAT_UNITS

    @property
    def head_fc(self) -> bool:
        return self.variant == "plusfc"

    @property
    def head_units(self) -> int:
        return NetworkConfig.PLUSFC_UNITS if self.head_fc else NetworkConfig.SHARED_UNITS


def parameter_shapes(arch: ArchitectureSpec) -> "OrderedDict[str, Tuple[int, ...]]":
    """Name -> shape for every parameter, in canonical order."""
    spec = arch.obs_spec
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()

    for branch, in_channels in (("screen", spec.screen_channels), ("minimap", spec.minimap_channels)):
        channels = in_channels
        for index, (out_channels, kernel) in enumerate(arch.branch_layers, start=1):
            shapes[f"{branch}.conv{index}.weight"] = (out_channels, channels, kernel, kernel)
            shapes[f"{branch}.conv{index}.bias"] = (out_channels,)
            channels = out_channels

    shapes["flat.fc.weight"] = (NetworkConfig.FLAT_UNITS, spec.flat_dim)
    shapes["flat.fc.bias"] = (NetworkConfig.FLAT_UNITS,)

    kernel = NetworkConfig.SPATIAL_KERNEL
    shapes["spatial.conv.weight"] = (1, arch.state_channels, kernel, kernel)
    shapes["spatial.conv.bias"] = (1,)

    shapes["shared.fc.weight"] = (NetworkConfig.SHARED_UNITS, arch.state_channels)
    shapes["shared.fc.bias"] = (NetworkConfig.SHARED_UNITS,)

    if arch.head_fc:
        for head in ("value", "fn"):
            shapes[f"{head}.fc.weight"] = (NetworkConfig.PLUSFC_UNITS, NetworkConfig.SHARED_UNITS)
            shapes[f"{head}.fc.bias"] = (NetworkConfig.PLUSFC_UNITS,)

    shapes["value.out.weight"] = (1, arch.head_units)
    shapes["value.out.bias"] = (1,)
    shapes["fn.out.weight"] = (spec.num_functions, arch.head_units)
    shapes["fn.out.bias"] = (spec.num_functions,)
    return shapes


def _fans(shape: Tuple[int, ...]) -> Tuple[int, int]:
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        return shape[1] * receptive, shape[0] * receptive
    return shape[1], shape[0]


def build(arch: ArchitectureSpec, init_seed: int, dtype=TRAIN_DTYPE) -> ParameterSet:
    """
    Create freshly initialized parameters.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)); biases are zero.
    The result is a deterministic function of init_seed.
    """
    rng = np.random.default_rng(init_seed)
    params = ParameterSet()
    for name, shape in parameter_shapes(arch).items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(shape)
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, size=shape)
        params.add(Parameter(name, Tensor(data, dtype=dtype)))
    logger.debug(f"Built {arch.variant} network: {params}")
    return params


def count_parameters(arch: ArchitectureSpec) -> int:
    return int(sum(np.prod(shape) for shape in parameter_shapes(arch).values()))


def shape_mismatches(arch: ArchitectureSpec, shapes: Dict[str, Tuple[int, ...]]) -> List[str]:
    """Describe every tensor whose name or shape disagrees with the architecture."""
    expected = parameter_shapes(arch)
    problems = []
    for name, shape in expected.items():
        if name not in shapes:
            problems.append(f"{name}: missing (expected {shape})")
        elif tuple(shapes[name]) != shape:
            problems.append(f"{name}: expected {shape}, got {tuple(shapes[name])}")
    for name in shapes:
        if name not in expected:
            problems.append(f"{name}: unexpected tensor")
    return problems
