"""Dense tensors and the computation tape used for reverse-mode differentiation."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when primitive inputs do not conform."""


class NumericalError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""


class Tensor:
    """An n-d float array plus the bookkeeping the tape needs.

    ``data`` keeps the dtype it was created with; the core runs at float32
    and the gradient checks promote everything to float64.
    """

    __slots__ = ("data", "name", "requires_grad", "__weakref__")

    def __init__(self, data, name: str | None = None, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # Operator sugar; the primitives live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _lift(other, self))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_lift(other, self), self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


class Node:
    __slots__ = ("kind", "inputs", "output", "backward")

    def __init__(self, kind: str, inputs: Sequence[Tensor], output: Tensor,
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.kind = kind
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


_ACTIVE: list["Tape"] = []


class Tape:
    """Records primitive applications in execution order.

    Use as a context manager; primitives evaluated while a tape is active and
    touching at least one tensor with ``requires_grad`` are recorded.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def gradients(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Propagate d(loss) back through the tape; keyed by ``id`` of tensor."""
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return grads

    def backward(self, loss: Tensor, params) -> dict[str, np.ndarray]:
        """Gradient of ``loss`` for every tensor in ``params`` (a ParamStore or
        name->Tensor mapping). Parameters the loss does not reach get zeros."""
        raw = self.gradients(loss)
        out = {}
        for name, t in params.items():
            g = raw.get(id(t))
            out[name] = np.zeros_like(t.data) if g is None else g.astype(t.data.dtype, copy=False)
        return out


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording for inference-only passes."""
    saved = list(_ACTIVE)
    _ACTIVE.clear()
    try:
        yield
    finally:
        _ACTIVE[:] = saved


def backward(tape: Tape, loss: Tensor, params) -> dict[str, np.ndarray]:
    return tape.backward(loss, params)
