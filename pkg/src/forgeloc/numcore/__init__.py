"""Minimal numpy tensor core with reverse-mode differentiation."""

import numpy as np

from . import ops
from .optim import Adam, optimizer_step
from .params import ParamStore, name_rng
from .tensor import NumericalError, ShapeError, Tape, Tensor, backward, no_grad


def sinusoidal_pe(T: int, D: int, dtype=np.float32) -> np.ndarray:
    """pe[t, 2j] = sin(t / 10000^(2j/D)), pe[t, 2j+1] = cos(same)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if D % 2:
        raise ValueError(f"embedding width must be even, got {D}")
    t = np.arange(T, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, D, 2, dtype=np.float64) / D)
    pe = np.empty((T, D), dtype=np.float64)
    pe[:, 0::2] = np.sin(t / freq)
    pe[:, 1::2] = np.cos(t / freq)
    return pe.astype(dtype)


__all__ = [
    "Adam", "NumericalError", "ParamStore", "ShapeError", "Tape", "Tensor",
    "backward", "name_rng", "no_grad", "ops", "optimizer_step", "sinusoidal_pe",
]
