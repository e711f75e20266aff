"""Temporal localisation metrics: interval IoU, AP over an IoU grid, and
average recall at fixed proposal budgets.

Intervals are half-open frame ranges. Matching is greedy in confidence
order: each proposal takes the highest-IoU ground truth still unmatched in
its own video, provided the IoU clears the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class MetricsError(ValueError):
    pass


def interval_iou(a: Sequence[float], b: Sequence[float]) -> float:
    if a[1] <= a[0] or b[1] <= b[0]:
        raise ValueError(f"degenerate interval in IoU: {a}, {b}")
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def _default_map_grid() -> list[float]:
    return [round(0.1 * i, 1) for i in range(1, 8)]


def _default_ar_grid() -> list[float]:
    return [round(0.5 + 0.05 * i, 2) for i in range(10)]


@dataclass
class EvalConfig:
    map_iou_grid: list[float] = field(default_factory=_default_map_grid)
    ar_budgets: list[int] = field(default_factory=lambda: [20, 10, 5, 2])
    ar_iou_grid: list[float] = field(default_factory=_default_ar_grid)

    def __post_init__(self):
        for t in self.map_iou_grid + self.ar_iou_grid:
            if not 0 < t <= 1:
                raise ValueError(f"IoU threshold {t} outside (0, 1]")
        if any(n < 1 for n in self.ar_budgets):
            raise ValueError("proposal budgets must be >= 1")


Predictions = Mapping[str, Sequence[Sequence[float]]]   # id -> [(start, end, confidence), ...]
GroundTruth = Mapping[str, Sequence[Sequence[float]]]   # id -> [(start, end), ...]


def _ranked(props: Sequence[Sequence[float]]) -> list[tuple[float, float, float]]:
    return sorted(((float(s), float(e), float(c)) for s, e, c in props), key=lambda p: (-p[2], p[0]))


def greedy_match(props: Sequence[Sequence[float]], gts: Sequence[Sequence[float]], iou_thr: float) -> list[bool]:
    """Hit flags for ``props`` (already in rank order) against one video's GT."""
    used = [False] * len(gts)
    hits = []
    for s, e, _ in props:
        best, best_iou = -1, -1.0
        for g, (gs, ge) in enumerate(gts):
            if used[g]:
                continue
            iou = interval_iou((s, e), (gs, ge))
            if iou >= iou_thr and iou > best_iou:
                best, best_iou = g, iou
        if best >= 0:
            used[best] = True
        hits.append(best >= 0)
    return hits


def _count_gt(gt: GroundTruth) -> int:
    n = sum(len(v) for v in gt.values())
    if n == 0:
        raise MetricsError("no ground-truth intervals: AP/AR undefined")
    return n


def average_precision(predictions: Predictions, gt: GroundTruth, iou_thr: float) -> float:
    n_gt = _count_gt(gt)
    pooled = []
    for vid in sorted(gt):
        for s, e, c in predictions.get(vid, ()):
            pooled.append((-float(c), vid, float(s), float(e)))
    pooled.sort(key=lambda p: (p[0], p[1], p[2]))
    used = {vid: [False] * len(g) for vid, g in gt.items()}
    tp = np.zeros(len(pooled))
    for i, (_, vid, s, e) in enumerate(pooled):
        best, best_iou = -1, -1.0
        for g, (gs, ge) in enumerate(gt[vid]):
            if used[vid][g]:
                continue
            iou = interval_iou((s, e), (gs, ge))
            if iou >= iou_thr and iou > best_iou:
                best, best_iou = g, iou
        if best >= 0:
            used[vid][best] = True
            tp[i] = 1
    if not len(pooled):
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(pooled) + 1)
    # all-point interpolation: precision envelope integrated over recall steps
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float((steps * envelope).sum())


def average_recall(predictions: Predictions, gt: GroundTruth, budget: int,
                   iou_grid: Sequence[float]) -> float:
    n_gt = _count_gt(gt)
    recalls = []
    for thr in iou_grid:
        matched = 0
        for vid, gts in gt.items():
            kept = _ranked(predictions.get(vid, ()))[:budget]
            matched += sum(greedy_match(kept, gts, thr))
        recalls.append(matched / n_gt)
    return float(np.mean(recalls))


@dataclass
class MetricsReport:
    ap: dict[float, float]
    ar: dict[int, float]
    n_videos: int
    n_gt: int
    missing: list[str] = field(default_factory=list)

    @property
    def mean_ap(self) -> float:
        return float(np.mean(list(self.ap.values())))

    @property
    def mean_ar(self) -> float:
        return float(np.mean(list(self.ar.values())))

    def to_json(self) -> dict:
        out = {
            "map": {**{f"{t:g}": v for t, v in self.ap.items()}, "avg": self.mean_ap},
            "ar": {**{str(n): v for n, v in self.ar.items()}, "avg": self.mean_ar},
            "n_videos": self.n_videos,
            "n_gt": self.n_gt,
        }
        if self.missing:
            out["missing"] = list(self.missing)
        return out


def gt_from_intervals(intervals: Sequence[Sequence]) -> list[tuple[int, int]]:
    """Video-level GT: distinct (start, end) spans regardless of modality tag."""
    return sorted({(int(iv[0]), int(iv[1])) for iv in intervals})


def evaluate(predictions: Predictions, gt: GroundTruth, config: EvalConfig | None = None) -> MetricsReport:
    """Score predictions against GT; ids absent from ``predictions`` count as
    zero proposals and are listed in ``missing``."""
    config = config or EvalConfig()
    missing = sorted(set(gt) - set(predictions))
    ap = {t: average_precision(predictions, gt, t) for t in config.map_iou_grid}
    ar = {n: average_recall(predictions, gt, n, config.ar_iou_grid) for n in config.ar_budgets}
    return MetricsReport(ap, ar, len(gt), _count_gt(gt), missing)
