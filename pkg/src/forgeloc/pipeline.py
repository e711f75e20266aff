"""Inference glue shared by the CLI, the estimator and the acceptance harness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datagen import Episode, forged_mask
from .fusion import cross_modal_fuse, embed
from .localize import Proposal, RoutingDecision, branch_scores, extract_proposals, route
from .metrics import EvalConfig, MetricsReport, evaluate, gt_from_intervals
from .network import MODALITY_PREFIX, Inference, Network, episode_rng, infer
from .numcore import no_grad


@dataclass
class VideoPrediction:
    id: str
    decision: RoutingDecision
    proposals: list[Proposal]
    inference: Inference


def predict_episodes(net: Network, episodes: Sequence[Episode], workers: int = 1) -> list[VideoPrediction]:
    cfg = net.config
    out = []
    for ep, res in zip(episodes, infer(net, episodes, workers=workers)):
        decision = route(res.h1_video)
        props: list[Proposal] = []
        if decision.branch != "none":
            scores = branch_scores(decision, res.frame_probs, cfg.rec_score_weight)
            props = extract_proposals(scores, cfg.thresholds, cfg.gap, cfg.min_len, cfg.nms_iou, decision.branch)
        out.append(VideoPrediction(ep.id, decision, props, res))
    return out


def ground_truth(episodes: Sequence[Episode]) -> dict[str, list[tuple[int, int]]]:
    missing = [ep.id for ep in episodes if ep.gt_intervals is None]
    if missing:
        raise ValueError(f"no interval annotations for {len(missing)} episodes (e.g. {missing[0]})")
    return {ep.id: gt_from_intervals(ep.gt_intervals) for ep in episodes}


def score_predictions(preds: Sequence[VideoPrediction], episodes: Sequence[Episode],
                      eval_config: EvalConfig | None = None) -> MetricsReport:
    table = {p.id: [q.as_list() for q in p.proposals] for p in preds}
    return evaluate(table, ground_truth(episodes), eval_config)


def error_separation(preds: Sequence[VideoPrediction], episodes: Sequence[Episode]) -> tuple[float, float]:
    """Mean reconstruction error over forged frames and over authentic frames,
    pooled across both modalities (each modality judged by its own GT)."""
    forged, authentic = [], []
    for p, ep in zip(preds, episodes):
        for m, err in p.inference.recon_err.items():
            mask = forged_mask(ep, m)
            forged.append(err[mask])
            authentic.append(err[~mask])
    return float(np.concatenate(forged).mean()), float(np.concatenate(authentic).mean())


def error_curves(net: Network, episode: Episode) -> dict[str, np.ndarray]:
    """Per-frame reconstruction error of each modality, averaged over the
    configured number of mask draws (keyed by the episode id)."""
    cfg = net.config
    with no_grad():
        fused = cross_modal_fuse(embed(episode.visual, episode.audio, net.store), net.store, cfg.heads)
    feats = {"visual": fused.F_v_enh, "audio": fused.F_a_enh}
    return {m: net.fdns[m].stable_error_scores(feats[m], cfg.error_repeats, cfg.mask_ratio,
                                               episode_rng(cfg.seed, episode.id, 10 + s))[0]
            for s, m in enumerate(MODALITY_PREFIX)}
