"""
Dense tensors with gradient buffers and named parameter sets.
"""
from typing import Dict, Iterator, List, Optional, Tuple
import logging

import numpy as np

from app.numcore.exceptions import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)

# 32-bit for training, 64-bit for gradient checking
TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64


class Tensor:
    """
    Dense array of real values with a same-shape gradient accumulator.

    The gradient buffer starts at zero and is only ever added to by backward
    passes; callers reset it with zero_grad().
    """

    def __init__(self, data, dtype=TRAIN_DTYPE):
        self.data = np.ascontiguousarray(data, dtype=dtype)
        if self.data.ndim == 0 or any(dim <= 0 for dim in self.data.shape):
            raise ConfigurationError(f"Tensor dimensions must be positive, got {self.data.shape}")
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def copy(self) -> "Tensor":
        clone = Tensor(self.data.copy(), dtype=self.data.dtype)
        clone.grad[...] = self.grad
        return clone

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), dtype=dtype)

    def check_finite(self, label: str = "tensor") -> None:
        """Raise NumericalError if data or grad holds NaN/Inf."""
        if not np.all(np.isfinite(self.data)):
            raise NumericalError(f"Non-finite values in {label}")
        if not np.all(np.isfinite(self.grad)):
            raise NumericalError(f"Non-finite gradient in {label}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class Parameter:
    """A named tensor; the name fixes the tensor's role and its checkpoint entry."""

    def __init__(self, name: str, tensor: Tensor):
        self.name = name
        self.tensor = tensor

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray:
        return self.tensor.grad

    def __repr__(self) -> str:
        return f"Parameter(name='{self.name}', shape={self.tensor.shape})"


class ParameterSet:
    """
    Ordered collection of uniquely named parameters.

    Iteration order is insertion order, which is also the order tensors are
    written to checkpoints and laid out in shared memory.
    """

    def __init__(self, parameters: Optional[List[Parameter]] = None):
        self._params: Dict[str, Parameter] = {}
        for param in parameters or []:
            self.add(param)

    def add(self, param: Parameter) -> None:
        if param.name in self._params:
            raise ConfigurationError(f"Duplicate parameter name: {param.name}")
        self._params[param.name] = param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: param.tensor.shape for name, param in self._params.items()}

    def num_scalars(self) -> int:
        return sum(param.tensor.size for param in self)

    @property
    def dtype(self):
        first = next(iter(self._params.values()), None)
        return first.tensor.dtype if first is not None else TRAIN_DTYPE

    def zero_grad(self) -> None:
        for param in self:
            param.tensor.zero_grad()

    def copy(self) -> "ParameterSet":
        return ParameterSet([Parameter(p.name, p.tensor.copy()) for p in self])

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet([Parameter(p.name, p.tensor.astype(dtype)) for p in self])

    def values(self) -> Dict[str, np.ndarray]:
        return {p.name: p.data for p in self}

    def grads(self) -> Dict[str, np.ndarray]:
        return {p.name: p.grad for p in self}

    def grad_norm(self) -> float:
        total = 0.0
        for param in self:
            total += float(np.sum(np.square(param.grad, dtype=np.float64)))
        return float(np.sqrt(total))

    def __repr__(self) -> str:
        return f"ParameterSet({len(self)} tensors, {self.num_scalars()} scalars)"
