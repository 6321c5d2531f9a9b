"""
Tensors, named parameters and seeded random streams
"""
import hashlib
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Sequence, Union

import numpy as np
import numpy.typing as npt

from utils.error_handler import ConfigError, NumericalError

# Dense row-major float64 array; dims == ndarray.shape
Tensor = npt.NDArray[np.float64]

Rng = np.random.Generator


def as_tensor(data: Union[Sequence, np.ndarray, float], copy: bool = True) -> Tensor:
    """Convert `data` into a finite float64 array."""
    arr = np.array(data, dtype=np.float64, copy=copy)
    if not np.all(np.isfinite(arr)):
        raise NumericalError("tensor contains non-finite entries")
    return arr


def make_rng(seed: int) -> Rng:
    """
    Create the deterministic generator used for every stochastic choice.

    PCG64 seeded from a 64-bit value; identical seeds and call sequences give
    bitwise identical streams.
    """
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def derive_rng(seed: int, index: int) -> Rng:
    """Independent sub-stream `index` of `seed`; stable regardless of call order."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def draw_seed(rng: Rng) -> int:
    """Draw a 63-bit seed from `rng` for deriving sub-streams."""
    return int(rng.integers(0, 2 ** 63 - 1, dtype=np.int64))


@dataclass
class Param:
    """A trainable tensor with its gradient accumulator."""

    name: str
    value: Tensor
    grad: Tensor = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def dims(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def copy(self) -> "Param":
        return Param(self.name, self.value.copy())


class ModelParams:
    """
    Ordered collection of uniquely named parameters.

    Mutated by a single writer; reads are safe once training has stopped.
    """

    def __init__(self, params: Iterable[Param] = ()):
        self._params: Dict[str, Param] = {}
        for param in params:
            self.add(param)

    def add(self, param: Param) -> Param:
        if param.name in self._params:
            raise ConfigError(f"duplicate parameter name: {param.name}")
        self._params[param.name] = param
        return param

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for param in self:
            param.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(param.copy() for param in self)

    def as_dict(self) -> Dict[str, Tensor]:
        return {name: param.value for name, param in self._params.items()}

    def checksum(self) -> str:
        return tensor_checksum(self.as_dict())


def tensor_checksum(tensors: Dict[str, Tensor]) -> str:
    """SHA-256 over names, dims and little-endian float64 bytes, in key order."""
    digest = hashlib.sha256()
    for name, value in tensors.items():
        digest.update(name.encode("utf-8"))
        digest.update(np.asarray(value.shape, dtype="<u8").tobytes())
        digest.update(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return digest.hexdigest()
