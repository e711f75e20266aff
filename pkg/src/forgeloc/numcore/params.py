"""Named parameter storage with per-name deterministic initialisation."""

from __future__ import annotations

import math
import zlib
from typing import Iterator

import numpy as np

from .tensor import Tensor


def name_rng(seed: int, name: str) -> np.random.Generator:
    """RNG stream keyed by (seed, parameter name).

    Adding a parameter never changes another parameter's draw.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


class ParamStore:
    """Ordered name -> Tensor map; iteration is lexicographic by name."""

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._tensors: dict[str, Tensor] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._tensors))

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self):
        return [(n, self._tensors[n]) for n in self.names()]

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.ascontiguousarray(value, dtype=self.dtype), name=name, requires_grad=True)
        self._tensors[name] = t
        return t

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        bound = 1.0 / math.sqrt(fan_in)
        return self.add(name, name_rng(self.seed, name).uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape))

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {n: t for n, t in self.items() if n.startswith(prefix)}

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(state)
        extra = set(state) - set(self._tensors)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)} unexpected {sorted(extra)}")
        for name, value in state.items():
            cur = self._tensors[name]
            if tuple(value.shape) != cur.shape:
                raise ValueError(f"{name}: shape {tuple(value.shape)} != {cur.shape}")
            cur.data = np.array(value, dtype=self.dtype)

    def astype(self, dtype) -> "ParamStore":
        """Copy with every tensor cast (used by float64 gradient checks)."""
        other = ParamStore(self.seed, dtype)
        for name, t in self.items():
            other.add(name, t.data)
        return other
