"""Seven classifier heads, Top-k MIL pooling and the loss terms that tie the
original and reconstructed streams together."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .config import HEAD_IDS
from .datagen import LABELS
from .numcore import NumericalError, ParamStore, ShapeError, Tensor, ops


@dataclass(frozen=True)
class HeadSpec:
    id: str
    inputs: tuple[str, ...]
    label_space: str  # "4class", "visual" or "audio"
    weight: float

    @property
    def n_classes(self) -> int:
        return 4 if self.label_space == "4class" else 2


# F_v / F_a are the cross-attention-enhanced halves of the fused sequence;
# *_rec are the autoencoder reconstructions of those halves.
HEAD_TABLE = (
    ("H1", ("F_v", "F_a", "F_v_rec", "F_a_rec"), "4class"),
    ("H2", ("F_v",), "visual"),
    ("H3", ("F_a",), "audio"),
    ("H4", ("F_v_rec",), "visual"),
    ("H5", ("F_a_rec",), "audio"),
    ("H6", ("F_v", "F_a"), "4class"),
    ("H7", ("F_v_rec", "F_a_rec"), "4class"),
)

STREAM_WIDTH = {"F_v": 1, "F_a": 1, "F_v_rec": 1, "F_a_rec": 1}


def make_heads(weights: Sequence[float] = (0.8,) + (0.1,) * 6) -> tuple[HeadSpec, ...]:
    if len(weights) != 7:
        raise ValueError("need seven head weights")
    return tuple(HeadSpec(hid, inputs, space, float(w)) for (hid, inputs, space), w in zip(HEAD_TABLE, weights))


def init_heads(store: ParamStore, dim: int, heads: Sequence[HeadSpec]) -> None:
    for h in heads:
        width = dim * sum(STREAM_WIDTH[s] for s in h.inputs)
        nn.init_linear(store, f"heads/{h.id}", width, h.n_classes)


@dataclass
class FrameScores:
    S: Tensor        # (B, T, n_classes) frame logits
    s_video: Tensor  # (B, n_classes)


def head_input(streams: Mapping[str, Tensor], head: HeadSpec) -> Tensor:
    parts = [streams[s] for s in head.inputs]
    T = {p.shape[-2] for p in parts}
    if len(T) != 1:
        raise ShapeError(f"{head.id}: streams disagree on T")
    return parts[0] if len(parts) == 1 else ops.concat(parts, axis=-1)


def head_forward(streams: Mapping[str, Tensor], head: HeadSpec, store: ParamStore, k_mil: int) -> FrameScores:
    S = nn.linear(store, f"heads/{head.id}", head_input(streams, head))
    return FrameScores(S, topk_mil_pool(S, k_mil))


def topk_mil_pool(S, k_mil: int) -> Tensor:
    """Per class channel, mean of the k_mil largest frame scores. S: (..., T, n)."""
    S = S if isinstance(S, Tensor) else Tensor(np.asarray(S))
    T = S.shape[-2]
    if not 1 <= k_mil <= T:
        raise ValueError(f"k_mil={k_mil} must lie in [1, {T}]")
    return ops.topk_mean(S, k_mil, axis=-2)


def head_target(label: str, head: HeadSpec) -> int:
    if head.label_space == "4class":
        return LABELS.index(label)
    if head.label_space == "visual":
        return int(label in ("fake-visual", "fake-both"))
    return int(label in ("fake-audio", "fake-both"))


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean softmax cross-entropy; logits (B, n)."""
    B, n = logits.shape
    onehot = np.zeros((B, n), dtype=logits.data.dtype)
    onehot[np.arange(B), np.asarray(targets)] = 1.0
    return ops.scale(ops.sum(ops.mul(ops.log_softmax(logits), Tensor(onehot))), -1.0 / B)


def cls_loss(s_videos: Mapping[str, Tensor], labels: Sequence[str], heads: Sequence[HeadSpec]) -> Tensor:
    """Weighted sum over heads of the batch-mean video-level cross-entropy."""
    total = None
    for h in heads:
        ce = ops.scale(cross_entropy(s_videos[h.id], [head_target(lab, h) for lab in labels]), h.weight)
        total = ce if total is None else ops.add(total, ce)
    return total


def kl_consistency(S_orig: Tensor, S_rec: Tensor) -> Tensor:
    """Symmetric KL between per-frame class distributions, averaged over frames
    (and batch)."""
    if S_orig.shape != S_rec.shape:
        raise ShapeError(f"KL needs equal shapes, got {S_orig.shape} and {S_rec.shape}")
    lp, lq = ops.log_softmax(S_orig), ops.log_softmax(S_rec)
    p, q = ops.softmax(S_orig), ops.softmax(S_rec)
    # KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)
    per_frame = ops.sum(ops.mul(ops.sub(p, q), ops.sub(lp, lq)), axis=-1)
    return ops.scale(ops.mean(per_frame), 0.5)


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    recon: float = 0.1
    kl: float = 0.1
    aicl: float = 0.1


COMPONENTS = ("L_CLS", "L_recon", "L_KL", "L_AICL")


def total_loss(components: Mapping[str, Tensor], weights: LossWeights) -> Tensor:
    values = {k: float(components[k].data) for k in COMPONENTS}
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise NumericalError(f"non-finite loss components: {bad}")
    lam = dict(zip(COMPONENTS, (weights.cls, weights.recon, weights.kl, weights.aicl)))
    total = None
    for k in COMPONENTS:
        term = ops.scale(components[k], lam[k])
        total = term if total is None else ops.add(total, term)
    return total


__all__ = ["HEAD_IDS", "COMPONENTS", "FrameScores", "HeadSpec", "LossWeights", "cls_loss",
           "head_forward", "head_target", "init_heads", "kl_consistency", "make_heads",
           "topk_mil_pool", "total_loss"]
