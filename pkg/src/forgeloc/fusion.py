"""Per-modality temporal embedding and bidirectional cross-modal fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .numcore import ParamStore, ShapeError, Tensor, ops, sinusoidal_pe


@dataclass
class EmbeddedPair:
    F_v: Tensor
    F_a: Tensor


@dataclass
class FusedFeatures:
    F_m: Tensor
    F_v_enh: Tensor
    F_a_enh: Tensor
    attn_weights: list


def init_fusion(store: ParamStore, c_visual: int, c_audio: int, dim: int) -> None:
    for tag, c in (("v", c_visual), ("a", c_audio)):
        store.uniform(f"fusion/embed_{tag}/W", (3, c, dim), fan_in=3 * c)
        store.zeros(f"fusion/embed_{tag}/b", (dim,))
    for tag in ("v", "a"):
        nn.init_norm(store, f"fusion/xattn_{tag}/ln_q", dim)
        nn.init_norm(store, f"fusion/xattn_{tag}/ln_kv", dim)
        nn.init_attention(store, f"fusion/xattn_{tag}/attn", dim)


def _as_batch(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "values", x), dtype=np.float32)
    return arr[None] if arr.ndim == 2 else arr


def embed(visual, audio, store: ParamStore) -> EmbeddedPair:
    """Conv(k=3, same) + GELU per modality, then add the sinusoidal table.

    Inputs are (T, C) or (B, T, C) arrays or FeatureSequences.
    """
    xv, xa = _as_batch(visual), _as_batch(audio)
    if xv.shape[:2] != xa.shape[:2]:
        raise ShapeError(f"visual {xv.shape} and audio {xa.shape} disagree on batch/T")
    out = []
    for tag, x in (("v", xv), ("a", xa)):
        w = store[f"fusion/embed_{tag}/W"]
        h = ops.gelu(ops.add(ops.conv1d(Tensor(x.astype(w.data.dtype)), w), store[f"fusion/embed_{tag}/b"]))
        pe = sinusoidal_pe(x.shape[1], w.shape[2], dtype=w.data.dtype)
        out.append(ops.add(h, Tensor(pe)))
    return EmbeddedPair(*out)


def cross_modal_fuse(pair: EmbeddedPair, store: ParamStore, n_heads: int) -> FusedFeatures:
    """Each stream attends to the other; residual add, then channel concat."""
    weights: list = []
    enhanced = {}
    for tag, own, other in (("v", pair.F_v, pair.F_a), ("a", pair.F_a, pair.F_v)):
        q = nn.norm(store, f"fusion/xattn_{tag}/ln_q", own)
        kv = nn.norm(store, f"fusion/xattn_{tag}/ln_kv", other)
        enhanced[tag] = ops.add(own, nn.attention(store, f"fusion/xattn_{tag}/attn", q, kv, n_heads, weights))
    F_m = ops.concat([enhanced["v"], enhanced["a"]], axis=-1)
    return FusedFeatures(F_m, enhanced["v"], enhanced["a"], weights)
