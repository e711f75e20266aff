"""Masked-autoencoder forgery discovery.

An encoder sees only the visible frames of a feature sequence; a lighter
decoder rebuilds every frame from the encoded visible tokens and a shared
learnable mask token. Trained on authentic videos only, the per-frame
reconstruction error becomes an unsupervised forgery indicator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import nn
from .numcore import ParamStore, ShapeError, Tensor, no_grad, ops, sinusoidal_pe


@dataclass(frozen=True)
class MaskPlan:
    T: int
    rho: float
    masked: np.ndarray
    visible: np.ndarray
    # full index -> position in ``visible``; -1 on masked frames
    idx: np.ndarray

    @classmethod
    def from_visible(cls, T: int, rho: float, visible: Sequence[int]) -> "MaskPlan":
        visible = np.asarray(visible, dtype=np.intp)
        idx = np.full(T, -1, dtype=np.intp)
        idx[visible] = np.arange(len(visible))
        masked = np.flatnonzero(idx < 0)
        return cls(T, rho, masked, visible, idx)


def n_masked(T: int, rho: float) -> int:
    return math.floor(rho * T)


def sample_mask(T: int, rho: float, rng: np.random.Generator) -> MaskPlan:
    """Mask floor(rho*T) frames chosen uniformly without replacement."""
    if not 0 < rho < 1:
        raise ValueError(f"mask ratio must lie in (0, 1), got {rho}")
    m = n_masked(T, rho)
    if m < 1 or T - m < 1:
        raise ValueError(f"T={T}, rho={rho} leaves {m} masked and {T - m} visible frames")
    perm = rng.permutation(T)
    return MaskPlan.from_visible(T, rho, np.sort(perm[m:]))


@dataclass
class ReconOutput:
    F_hat: Tensor
    err: np.ndarray
    queries: np.ndarray


def frame_errors(F: np.ndarray, F_hat: np.ndarray) -> np.ndarray:
    """Channel-wise L2 distance per frame."""
    return np.sqrt(((F.astype(np.float64) - F_hat.astype(np.float64)) ** 2).sum(axis=-1)).astype(np.float32)


def init_fdn(store: ParamStore, prefix: str, dim: int, dec_dim: int, enc_layers: int,
             dec_layers: int, mlp_ratio: int = 2) -> None:
    for i in range(enc_layers):
        nn.init_block(store, f"{prefix}/enc/{i}", dim, mlp_ratio)
    nn.init_norm(store, f"{prefix}/enc_norm", dim)
    nn.init_linear(store, f"{prefix}/to_dec", dim, dec_dim)
    store.zeros(f"{prefix}/mask_token", (dec_dim,))
    for i in range(dec_layers):
        nn.init_block(store, f"{prefix}/dec/{i}", dec_dim, mlp_ratio)
    nn.init_norm(store, f"{prefix}/dec_norm", dec_dim)
    nn.init_linear(store, f"{prefix}/out", dec_dim, dim)


class ForgeryDiscoveryNetwork:
    """One modality's masked autoencoder; parameters live under ``prefix``."""

    def __init__(self, store: ParamStore, prefix: str, n_heads: int):
        self.store = store
        self.prefix = prefix
        self.n_heads = n_heads
        self.enc_layers = _count_layers(store, f"{prefix}/enc/")
        self.dec_layers = _count_layers(store, f"{prefix}/dec/")

    @property
    def dim(self) -> int:
        return self.store[f"{self.prefix}/to_dec/W"].shape[0]

    @property
    def dec_dim(self) -> int:
        return self.store[f"{self.prefix}/mask_token"].shape[0]

    def encode(self, F_vis: Tensor, positions: np.ndarray) -> Tensor:
        """Encode visible frames; ``positions`` (B, n_vis) gives their frame indices."""
        dtype = F_vis.data.dtype
        pe = sinusoidal_pe(int(positions.max()) + 1, self.dim, dtype=dtype)[positions]
        x = ops.add(F_vis, Tensor(pe))
        for i in range(self.enc_layers):
            x = nn.block(self.store, f"{self.prefix}/enc/{i}", x, self.n_heads)
        x = nn.norm(self.store, f"{self.prefix}/enc_norm", x)
        return nn.linear(self.store, f"{self.prefix}/to_dec", x)

    def assemble_queries(self, Z_vis: Tensor, plans: Sequence[MaskPlan]) -> Tensor:
        """Decoder queries: visible frame i -> Z_vis[idx(i)] + p_i; masked -> e_mask + p_i."""
        B, n_vis, Dd = Z_vis.shape
        T = plans[0].T
        token = ops.broadcast_to(ops.reshape(self.store[f"{self.prefix}/mask_token"], (1, 1, Dd)), (B, 1, Dd))
        pool = ops.concat([Z_vis, token], axis=1)
        src = np.stack([np.where(p.idx >= 0, p.idx, n_vis) for p in plans])
        pe = sinusoidal_pe(T, Dd, dtype=Z_vis.data.dtype)
        return ops.add(ops.take(pool, src, axis=1), Tensor(pe))

    def decode(self, queries: Tensor) -> Tensor:
        x = queries
        for i in range(self.dec_layers):
            x = nn.block(self.store, f"{self.prefix}/dec/{i}", x, self.n_heads)
        x = nn.norm(self.store, f"{self.prefix}/dec_norm", x)
        return nn.linear(self.store, f"{self.prefix}/out", x)

    def reconstruct(self, F: Tensor, plans: Sequence[MaskPlan],
                    hook: Callable[[dict], None] | None = None) -> ReconOutput:
        """F: (B, T, D) or (T, D); one plan per batch row (all with equal T and rho)."""
        if F.ndim == 2:
            F = ops.reshape(F, (1,) + F.shape)
        B, T, D = F.shape
        if len(plans) != B:
            raise ShapeError(f"{len(plans)} mask plans for batch of {B}")
        if any(p.T != T for p in plans):
            raise ShapeError(f"mask plan length does not match T={T}")
        if len({len(p.visible) for p in plans}) != 1:
            raise ShapeError("mask plans in one batch must share the visible count")
        positions = np.stack([p.visible for p in plans])
        Z_vis = self.encode(ops.take(F, positions, axis=1), positions)
        queries = self.assemble_queries(Z_vis, plans)
        F_hat = self.decode(queries)
        err = frame_errors(F.data, F_hat.data)
        if hook is not None:
            hook({"prefix": self.prefix, "queries": queries.data, "err": err, "plans": list(plans)})
        return ReconOutput(F_hat, err, queries.data)

    def stable_error_scores(self, F: Tensor | np.ndarray, R: int, rho: float,
                            rng: np.random.Generator) -> np.ndarray:
        """Per-frame error averaged over R independent mask draws; (B, T)."""
        if R < 1:
            raise ValueError("repeat count must be >= 1")
        data = F.data if isinstance(F, Tensor) else np.asarray(F)
        if data.ndim == 2:
            data = data[None]
        B, T, _ = data.shape
        total = np.zeros((B, T), dtype=np.float64)
        with no_grad():
            x = Tensor(data)
            for _ in range(R):
                plans = [sample_mask(T, rho, rng) for _ in range(B)]
                total += self.reconstruct(x, plans).err
        return (total / R).astype(np.float32)


def _count_layers(store: ParamStore, prefix: str) -> int:
    ids = {n[len(prefix):].split("/", 1)[0] for n in store.names() if n.startswith(prefix)}
    return len(ids)


def recon_terms(F: Tensor, F_hat: Tensor, plans: Sequence[MaskPlan], y: Sequence[int]):
    """Numerator (sum of squared errors on authentic masked frames) and count.

    Returns (None, 0) when no authentic sample is present.
    """
    B, T = F.shape[0], F.shape[1]
    weight = np.zeros((B, T), dtype=F.data.dtype)
    for b, (plan, label) in enumerate(zip(plans, y)):
        if int(label) == 0:
            weight[b, plan.masked] = 1.0
    count = int(weight.sum())
    if count == 0:
        return None, 0
    sq = ops.sq_l2(ops.sub(F, F_hat), axis=-1)
    return ops.sum(ops.mul(sq, Tensor(weight))), count


def recon_loss(batch: Sequence[tuple[Tensor, Tensor, Sequence[MaskPlan], Sequence[int]]]) -> Tensor:
    """Squared reconstruction error over masked frames of authentic samples,
    normalised by the batch-wide number of such frames.

    ``batch`` holds (F, F_hat, plans, y) groups so sequences of different
    length can share one loss. Forged samples contribute nothing.
    """
    nums, total = [], 0
    for F, F_hat, plans, y in batch:
        num, count = recon_terms(F, F_hat, plans, y)
        if num is not None:
            nums.append(num)
            total += count
    if not nums:
        return Tensor(np.array(0.0, dtype=np.float32))
    acc = nums[0]
    for extra in nums[1:]:
        acc = ops.add(acc, extra)
    return ops.scale(acc, 1.0 / total)
