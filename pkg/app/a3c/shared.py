"""
Shared parameter store and the asynchronous update rule.

Parameters and optimizer statistics live in one RawArray per tensor, so a
lock guards exactly one tensor (hogwild mode). Strict mode serializes every
read and update through a single lock instead. Without a multiprocessing
context the store is process-local, which is what the single-worker
deterministic mode uses.
"""
from contextlib import nullcontext
from multiprocessing.sharedctypes import RawArray
from typing import Dict, Optional, Tuple
import ctypes
import logging
import threading

import numpy as np

from app.a3c.gradients import GradientSet
from app.a3c.schemas import TrainConfig
from app.numcore.tensor import TRAIN_DTYPE, Parameter, ParameterSet, Tensor

logger = logging.getLogger(__name__)


class LocalCounter:
    """Process-local stand-in for a synchronized multiprocessing Value."""

    def __init__(self, value: int = 0):
        self.value = value
        self._lock = threading.Lock()

    def get_lock(self):
        return self._lock


class RMSPropOptimizer:
    """g <- alpha*g + (1-alpha)*grad^2; param <- param - lr*grad/sqrt(g + eps)."""

    def __init__(self, learning_rate: float, alpha: float, eps: float):
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.eps = eps

    def step(self, param: np.ndarray, stats: np.ndarray, grad: np.ndarray) -> None:
        stats *= self.alpha
        stats += (1.0 - self.alpha) * grad * grad
        param -= self.learning_rate * grad / np.sqrt(stats + self.eps)


class SGDOptimizer:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, param: np.ndarray, stats: np.ndarray, grad: np.ndarray) -> None:
        param -= self.learning_rate * grad


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGDOptimizer(config.learning_rate)
    return RMSPropOptimizer(config.learning_rate, config.rmsprop_alpha, config.rmsprop_eps)


class SharedStore:
    """Global parameters, optimizer statistics and the global step counter T."""

    def __init__(self, shapes, param_buffers, stat_buffers, locks, global_lock, counter, lock_mode):
        self.shapes: Dict[str, Tuple[int, ...]] = shapes
        self._param_buffers = param_buffers
        self._stat_buffers = stat_buffers
        self._locks = locks
        self._global_lock = global_lock
        self._counter = counter
        self.lock_mode = lock_mode
        self._views()

    @classmethod
    def create(cls, params: ParameterSet, ctx=None, lock_mode: str = "hogwild", global_step: int = 0) -> "SharedStore":
        """
        Allocate a store initialized from params with zero optimizer statistics.

        Args:
            params: Initial global parameters (copied, stored as float32)
            ctx: multiprocessing context for a cross-process store; None for process-local
            lock_mode: "hogwild" (per-tensor locks) or "strict" (one lock)
            global_step: Initial value of T
        """
        shapes = params.shapes()
        param_buffers, stat_buffers, locks = {}, {}, {}
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            if ctx is None:
                param_buffers[name] = np.zeros(size, dtype=TRAIN_DTYPE)
                stat_buffers[name] = np.zeros(size, dtype=TRAIN_DTYPE)
                locks[name] = threading.Lock()
            else:
                param_buffers[name] = RawArray(ctypes.c_float, size)
                stat_buffers[name] = RawArray(ctypes.c_float, size)
                locks[name] = ctx.Lock()
        if ctx is None:
            global_lock, counter = threading.Lock(), LocalCounter(global_step)
        else:
            global_lock, counter = ctx.Lock(), ctx.Value(ctypes.c_longlong, global_step)

        store = cls(shapes, param_buffers, stat_buffers, locks, global_lock, counter, lock_mode)
        store.write(params.values())
        logger.debug(f"Shared store: {len(shapes)} tensors, {sum(v.size for v in store._params.values())} scalars, "
                     f"{'cross-process' if ctx is not None else 'local'}, {lock_mode} locking")
        return store

    def _views(self) -> None:
        self._params = {
            name: np.frombuffer(self._param_buffers[name], dtype=TRAIN_DTYPE).reshape(shape)
            for name, shape in self.shapes.items()
        }
        self._stats = {
            name: np.frombuffer(self._stat_buffers[name], dtype=TRAIN_DTYPE).reshape(shape)
            for name, shape in self.shapes.items()
        }

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_params"]
        del state["_stats"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._views()

    def _outer_lock(self):
        return self._global_lock if self.lock_mode == "strict" else nullcontext()

    def _tensor_lock(self, name: str):
        return self._locks[name] if self.lock_mode == "hogwild" else nullcontext()

    @property
    def global_step(self) -> int:
        return int(self._counter.value)

    def snapshot(self, into: Optional[ParameterSet] = None) -> ParameterSet:
        """Copy every tensor out of the store; each copy is untorn."""
        if into is None:
            into = ParameterSet([
                Parameter(name, Tensor(np.zeros(shape, dtype=TRAIN_DTYPE))) for name, shape in self.shapes.items()
            ])
        with self._outer_lock():
            for name, view in self._params.items():
                with self._tensor_lock(name):
                    into[name].data[...] = view
        return into

    def statistics(self) -> Dict[str, np.ndarray]:
        with self._outer_lock():
            result = {}
            for name, view in self._stats.items():
                with self._tensor_lock(name):
                    result[name] = view.copy()
        return result

    def write(self, values: Dict[str, np.ndarray]) -> None:
        """Overwrite parameters (initialization and rollback); statistics are kept."""
        with self._outer_lock():
            for name, array in values.items():
                with self._tensor_lock(name):
                    self._params[name][...] = array

    def update(self, grads: Dict[str, np.ndarray], optimizer, steps: int) -> int:
        """Apply grads tensor by tensor, advance T by steps, and return the new T."""
        with self._outer_lock():
            for name, grad in grads.items():
                with self._tensor_lock(name):
                    optimizer.step(self._params[name], self._stats[name], grad.astype(TRAIN_DTYPE, copy=False))
            with self._counter.get_lock():
                self._counter.value += steps
                return int(self._counter.value)


def apply_update(shared: SharedStore, gradients: GradientSet, optimizer) -> int:
    """Asynchronous shared update from one rollout's gradients; returns T after the update."""
    return shared.update(gradients.grads, optimizer, gradients.steps)
