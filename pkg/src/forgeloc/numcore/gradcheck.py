"""Central finite-difference gradient oracle (float64)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d f / d arr by central differences; ``arr`` is perturbed in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        grad.reshape(-1)[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(diff.max()) if diff.size else 0.0


def check_gradients(build: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-6) -> float:
    """Worst relative error between tape gradients and finite differences.

    ``build`` recomputes the scalar loss from ``leaves`` (float64 tensors with
    ``requires_grad``); it must be deterministic.
    """
    with Tape() as tape:
        loss = build()
    raw = tape.gradients(loss)
    worst = 0.0
    for leaf in leaves:
        analytic = raw.get(id(leaf), np.zeros_like(leaf.data))

        def f():
            return float(build().data)

        numeric = numeric_grad(f, leaf.data, h)
        worst = max(worst, max_rel_error(analytic, numeric))
    return worst
