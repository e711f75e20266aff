from __future__ import annotations

import numpy as np

from .params import ParamStore


class Adam:
    """Adam with bias correction; state is keyed by parameter name."""

    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamStore, grads: dict[str, np.ndarray]) -> ParamStore:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in sorted(grads):
            p = params[name]
            g = np.asarray(grads[name], dtype=p.data.dtype)
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
            dt = p.data.dtype.type
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = dt(b1) * m + dt(1 - b1) * g
            v = dt(b2) * v + dt(1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / dt(c1)
            vhat = v / dt(c2)
            p.data = p.data - dt(self.lr) * mhat / (np.sqrt(vhat) + dt(self.eps))
        return params

    def state(self) -> dict[str, np.ndarray]:
        out = {"opt/step": np.array(self.t, dtype=np.float32)}
        for name in sorted(self.m):
            out[f"opt/m/{name}"] = self.m[name]
            out[f"opt/v/{name}"] = self.v[name]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["opt/step"])
        self.m = {k[len("opt/m/"):]: np.array(v) for k, v in state.items() if k.startswith("opt/m/")}
        self.v = {k[len("opt/v/"):]: np.array(v) for k, v in state.items() if k.startswith("opt/v/")}


def optimizer_step(params: ParamStore, grads: dict[str, np.ndarray], optimizer: Adam) -> ParamStore:
    return optimizer.step(params, grads)
