"""Hotspot-guided asymmetric triplet loss.

Each video is summarised by the mean of its K highest-error frames. Only
authentic videos act as anchors: the hardest positive is the farthest other
authentic summary, the hardest negative the closest forged one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numcore import Tensor, ops


@dataclass
class HotspotSet:
    modality: str
    K: int
    indices: np.ndarray
    f_local: np.ndarray


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int
    f_anc: np.ndarray
    f_pos: np.ndarray
    f_neg: np.ndarray


def hotspot_indices(err: np.ndarray, K: int) -> np.ndarray:
    """Indices of the K largest errors along the last axis, lowest index on ties.

    Returned in ascending index order.
    """
    err = np.asarray(err)
    T = err.shape[-1]
    if not 1 <= K <= T:
        raise ValueError(f"K={K} must lie in [1, {T}]")
    order = np.argsort(-err, axis=-1, kind="stable")[..., :K]
    return np.sort(order, axis=-1)


def select_hotspots(err: np.ndarray, F, K: int, modality: str = "visual") -> HotspotSet:
    data = np.asarray(F.data if isinstance(F, Tensor) else F)
    if data.shape[0] != len(err):
        raise ValueError(f"{len(err)} scores for {data.shape[0]} frames")
    idx = hotspot_indices(err, K)
    return HotspotSet(modality, K, idx, data[idx].mean(axis=0))


def local_features(F: Tensor, err: np.ndarray, K: int) -> Tensor:
    """Differentiable (B, D) hotspot means; the selection itself is constant."""
    idx = hotspot_indices(err, K)
    return ops.mean(ops.take(F, idx, axis=1), axis=1)


def mine_triplets(locals_: Sequence[tuple[np.ndarray, int]]) -> list[Triplet]:
    feats = [np.asarray(f, dtype=np.float64) for f, _ in locals_]
    ys = [int(y) for _, y in locals_]
    real = [i for i, y in enumerate(ys) if y == 0]
    fake = [i for i, y in enumerate(ys) if y == 1]
    if len(real) < 2 or not fake:
        return []
    X = np.stack(feats)
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1)
    triplets = []
    for i in real:
        others = [j for j in real if j != i]
        # argmax/argmin return the first hit, i.e. the lowest sample index
        pos = others[int(np.argmax(d2[i, others]))]
        neg = fake[int(np.argmin(d2[i, fake]))]
        f = locals_
        triplets.append(Triplet(i, pos, neg, np.asarray(f[i][0]), np.asarray(f[pos][0]), np.asarray(f[neg][0])))
    return triplets


def aicl_loss(triplets: Sequence[Triplet], margin: float, features: Tensor | None = None) -> Tensor:
    """Mean hinge max(d(a,p)^2 - d(a,n)^2 + m, 0) over triplets.

    With ``features`` (N, D), rows are gathered by triplet index so gradients
    reach the features; otherwise the stored vectors are used as constants.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if not triplets:
        dtype = features.data.dtype if features is not None else np.float32
        return Tensor(np.array(0.0, dtype=dtype))
    if features is None:
        a = Tensor(np.stack([t.f_anc for t in triplets]))
        p = Tensor(np.stack([t.f_pos for t in triplets]).astype(a.data.dtype))
        n = Tensor(np.stack([t.f_neg for t in triplets]).astype(a.data.dtype))
    else:
        F3 = ops.reshape(features, (1,) + features.shape)

        def rows(which):
            return ops.reshape(ops.take(F3, np.array([which]), axis=1), (len(which), features.shape[1]))

        a = rows([t.anchor for t in triplets])
        p = rows([t.positive for t in triplets])
        n = rows([t.negative for t in triplets])
    gap = ops.sub(ops.sq_l2(ops.sub(a, p)), ops.sq_l2(ops.sub(a, n)))
    hinge = ops.relu(ops.add(gap, Tensor(np.array(margin, dtype=gap.data.dtype))))
    return ops.mean(hinge)


def modality_loss(F_local: Tensor, y: Sequence[int], margin: float) -> tuple[Tensor, list[Triplet]]:
    data = F_local.data
    triplets = mine_triplets([(data[i], int(y[i])) for i in range(len(y))])
    return aicl_loss(triplets, margin, features=F_local), triplets


def aicl_module_loss(local_v: Tensor, local_a: Tensor, y: Sequence[int], margin: float) -> Tensor:
    """Average of the visual and audio triplet losses."""
    lv, _ = modality_loss(local_v, y, margin)
    la, _ = modality_loss(local_a, y, margin)
    return ops.scale(ops.add(lv, la), 0.5)
