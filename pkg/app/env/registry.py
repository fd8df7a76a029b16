"""
Global function-identifier registry shared by every minigame.

A single fixed table keeps policy-head shapes identical across minigames,
which is what makes weight transfer between them well-formed.
"""
from typing import List, NamedTuple, Tuple


class FunctionSpec(NamedTuple):
    name: str
    spatial: bool


FUNCTIONS: Tuple[FunctionSpec, ...] = (
    FunctionSpec("no_op", False),
    FunctionSpec("select_all", False),
    FunctionSpec("select_unit_1", False),
    FunctionSpec("select_unit_2", False),
    FunctionSpec("move_screen", True),
    FunctionSpec("attack_screen", True),
    FunctionSpec("move_camera", True),
)

NO_OP = 0
SELECT_ALL = 1
SELECT_UNIT_1 = 2
SELECT_UNIT_2 = 3
MOVE_SCREEN = 4
ATTACK_SCREEN = 5
MOVE_CAMERA = 6

NUM_FUNCTIONS = len(FUNCTIONS)


def registry() -> List[Tuple[str, bool]]:
    """Return (function name, requires_spatial) pairs in registry order."""
    return [(spec.name, spec.spatial) for spec in FUNCTIONS]
