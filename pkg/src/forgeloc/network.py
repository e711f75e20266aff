"""Full forward pass: embed -> fuse -> per-modality reconstruction -> heads,
plus assembly of the four loss components over a (possibly ragged) batch."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import aicl, fdn, fusion, mtlr
from .config import RunConfig
from .datagen import Episode
from .numcore import ParamStore, Tensor, ops

MODALITY_PREFIX = {"visual": "fdn_v", "audio": "fdn_a"}


@dataclass
class ForwardPass:
    pair: fusion.EmbeddedPair
    fused: fusion.FusedFeatures
    recon: dict[str, fdn.ReconOutput]
    plans: dict[str, list[fdn.MaskPlan]]
    streams: dict[str, Tensor]
    scores: dict[str, mtlr.FrameScores]

    def features(self, modality: str) -> Tensor:
        """The sequence the modality's autoencoder reconstructs."""
        return self.streams["F_v" if modality == "visual" else "F_a"]


def episode_rng(seed: int, episode_id: str, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(episode_id.encode("utf-8")), stream])


class Network:
    """Parameter container and forward pass for one configuration."""

    def __init__(self, config: RunConfig, c_visual: int, c_audio: int, store: ParamStore | None = None):
        self.config = config
        self.c_visual = c_visual
        self.c_audio = c_audio
        self.heads = mtlr.make_heads(config.head_weights)
        if store is None:
            store = ParamStore(seed=config.seed)
            fusion.init_fusion(store, c_visual, c_audio, config.dim)
            for prefix in MODALITY_PREFIX.values():
                fdn.init_fdn(store, prefix, config.dim, config.dec_dim, config.enc_layers,
                             config.dec_layers, config.mlp_ratio)
            mtlr.init_heads(store, config.dim, self.heads)
        self.store = store
        self.fdns = {m: fdn.ForgeryDiscoveryNetwork(store, p, config.heads) for m, p in MODALITY_PREFIX.items()}

    def astype(self, dtype) -> "Network":
        return Network(self.config, self.c_visual, self.c_audio, self.store.astype(dtype))

    def forward(self, visual: np.ndarray, audio: np.ndarray, plans: dict[str, Sequence[fdn.MaskPlan]],
                hook: Callable[[dict], None] | None = None) -> ForwardPass:
        """visual (B, T, Cv), audio (B, T, Ca); one mask plan per row and modality."""
        cfg = self.config
        pair = fusion.embed(visual, audio, self.store)
        fused = fusion.cross_modal_fuse(pair, self.store, cfg.heads)
        feats = {"visual": fused.F_v_enh, "audio": fused.F_a_enh}
        recon = {m: self.fdns[m].reconstruct(feats[m], plans[m], hook) for m in MODALITY_PREFIX}
        # Reconstructions enter the heads as constants: the autoencoders learn
        # from the authentic-only reconstruction loss alone.
        streams = {"F_v": feats["visual"], "F_a": feats["audio"],
                   "F_v_rec": Tensor(recon["visual"].F_hat.data), "F_a_rec": Tensor(recon["audio"].F_hat.data)}
        k_mil = cfg.k_mil(pair.F_v.shape[1])
        scores = {h.id: mtlr.head_forward(streams, h, self.store, k_mil) for h in self.heads}
        return ForwardPass(pair, fused, recon, {m: list(p) for m, p in plans.items()}, streams, scores)

    def sample_plans(self, B: int, T: int, rng: np.random.Generator) -> dict[str, list[fdn.MaskPlan]]:
        rho = self.config.mask_ratio
        return {m: [fdn.sample_mask(T, rho, rng) for _ in range(B)] for m in MODALITY_PREFIX}

    def hotspot_errors(self, out: ForwardPass, rng: np.random.Generator) -> dict[str, np.ndarray]:
        cfg = self.config
        return {m: self.fdns[m].stable_error_scores(out.features(m), cfg.error_repeats, cfg.mask_ratio, rng)
                for m in MODALITY_PREFIX}


def group_by_length(episodes: Sequence[Episode]) -> list[list[int]]:
    """Positions of episodes grouped by T (ascending T, original order inside)."""
    groups: dict[int, list[int]] = {}
    for i, ep in enumerate(episodes):
        groups.setdefault(ep.T, []).append(i)
    return [groups[T] for T in sorted(groups)]


def stack_features(episodes: Sequence[Episode]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([e.visual.values for e in episodes]),
            np.stack([e.audio.values for e in episodes]))


@dataclass
class BatchResult:
    components: dict[str, Tensor]
    order: list[int]
    passes: list[ForwardPass]


def batch_losses(net: Network, episodes: Sequence[Episode], mask_rng: np.random.Generator,
                 hotspot_rng: np.random.Generator) -> BatchResult:
    """Forward every length-group of the batch and assemble L_CLS, L_recon,
    L_KL and L_AICL. Only video-level labels are read from ``episodes``."""
    cfg = net.config
    order: list[int] = []
    passes = []
    recon_groups = {"visual": [], "audio": []}
    locals_ = {"visual": [], "audio": []}
    s_video: dict[str, list[Tensor]] = {h.id: [] for h in net.heads}
    kl_terms = []
    for idx in group_by_length(episodes):
        group = [episodes[i] for i in idx]
        vis, aud = stack_features(group)
        B, T = vis.shape[:2]
        out = net.forward(vis, aud, net.sample_plans(B, T, mask_rng))
        passes.append(out)
        order.extend(idx)
        y = [e.y for e in group]
        errs = net.hotspot_errors(out, hotspot_rng)
        K = min(cfg.hotspot_k, T)
        for m in MODALITY_PREFIX:
            F = out.features(m)
            recon_groups[m].append((F, out.recon[m].F_hat, out.plans[m], y))
            locals_[m].append(aicl.local_features(F, errs[m], K))
        for h in net.heads:
            s_video[h.id].append(out.scores[h.id].s_video)
        kl_terms.append(ops.scale(mtlr.kl_consistency(out.scores["H6"].S, out.scores["H7"].S), B / len(episodes)))

    def cat(parts):
        return parts[0] if len(parts) == 1 else ops.concat(parts, axis=0)

    def add_all(parts):
        acc = parts[0]
        for p in parts[1:]:
            acc = ops.add(acc, p)
        return acc

    labels = [episodes[i].label for i in order]
    ys = [episodes[i].y for i in order]
    l_cls = mtlr.cls_loss({hid: cat(v) for hid, v in s_video.items()}, labels, net.heads)
    l_recon = ops.scale(ops.add(fdn.recon_loss(recon_groups["visual"]), fdn.recon_loss(recon_groups["audio"])), 0.5)
    l_aicl = aicl.aicl_module_loss(cat(locals_["visual"]), cat(locals_["audio"]), ys, cfg.margin)
    l_kl = add_all(kl_terms)
    return BatchResult({"L_CLS": l_cls, "L_recon": l_recon, "L_KL": l_kl, "L_AICL": l_aicl}, order, passes)


def loss_weights(cfg: RunConfig) -> mtlr.LossWeights:
    return mtlr.LossWeights(cfg.lambda_cls, cfg.lambda_recon, cfg.lambda_kl, cfg.lambda_aicl)


@dataclass
class Inference:
    id: str
    h1_video: np.ndarray
    frame_probs: dict[str, np.ndarray]
    recon_err: dict[str, np.ndarray]


def infer(net: Network, episodes: Sequence[Episode], batch_size: int = 64, workers: int = 1) -> list[Inference]:
    """Evaluation-mode forward. Mask draws are keyed per episode id and the
    chunking does not depend on ``workers``, so results are identical for any
    worker count and come back in input order."""
    from concurrent.futures import ThreadPoolExecutor

    from .localize import softmax
    from .numcore import no_grad

    cfg = net.config
    chunks = [idx[s:s + batch_size] for idx in group_by_length(episodes) for s in range(0, len(idx), batch_size)]

    def run(chunk):
        group = [episodes[i] for i in chunk]
        vis, aud = stack_features(group)
        T = vis.shape[1]
        plans = {m: [fdn.sample_mask(T, cfg.mask_ratio, episode_rng(cfg.seed, e.id, s)) for e in group]
                 for s, m in enumerate(MODALITY_PREFIX)}
        out = net.forward(vis, aud, plans)
        return [Inference(episodes[i].id,
                          out.scores["H1"].s_video.data[j].copy(),
                          {hid: softmax(fs.S.data[j]) for hid, fs in out.scores.items()},
                          {m: out.recon[m].err[j].copy() for m in MODALITY_PREFIX})
                for j, i in enumerate(chunk)]

    # one no_grad around the pool: the tape stack is module-global
    with no_grad():
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(run, chunks))
        else:
            parts = [run(c) for c in chunks]
    results = {i: r for chunk, part in zip(chunks, parts) for i, r in zip(chunk, part)}
    return [results[i] for i in range(len(episodes))]
