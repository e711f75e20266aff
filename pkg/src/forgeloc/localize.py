"""From frame scores to ranked forgery proposals.

The predicted video label picks a score branch (visual, audio, joint or
none); the branch's frame scores are binarised at a sweep of thresholds,
short gaps are bridged, and the pooled segments are de-duplicated with NMS.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datagen import LABELS
from .metrics import interval_iou

BRANCH_FOR_LABEL = {"real": "none", "fake-visual": "visual", "fake-audio": "audio", "fake-both": "joint"}


@dataclass(frozen=True)
class Proposal:
    start: int
    end: int
    confidence: float
    branch: str = ""

    def as_list(self) -> list:
        return [self.start, self.end, self.confidence]


@dataclass(frozen=True)
class RoutingDecision:
    label: str
    branch: str


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def route(h1_video_logits: np.ndarray) -> RoutingDecision:
    """Route on the main head's video-level prediction only."""
    label = LABELS[int(np.argmax(softmax(h1_video_logits)))]
    return RoutingDecision(label, BRANCH_FOR_LABEL[label])


def branch_scores(decision: RoutingDecision, frame_probs: Mapping[str, np.ndarray],
                  rec_weight: float = 0.5) -> np.ndarray:
    """Per-frame forgery score in [0, 1] for the routed branch.

    ``frame_probs`` maps head id to (T, n_classes) per-frame probabilities.
    Single-modality branches blend the original-stream head with its
    reconstructed-stream twin; ``rec_weight`` is the twin's share (0.5 is the
    plain mean).
    """
    if not 0 <= rec_weight <= 1:
        raise ValueError(f"rec_weight must lie in [0, 1], got {rec_weight}")
    pairs = {"visual": ("H2", "H4"), "audio": ("H3", "H5")}
    if decision.branch in pairs:
        orig, rec = pairs[decision.branch]
        return (1.0 - rec_weight) * frame_probs[orig][:, 1] + rec_weight * frame_probs[rec][:, 1]
    if decision.branch == "joint":
        return 1.0 - frame_probs["H1"][:, 0]
    raise ValueError("no score branch for a video routed as real")


def segments(scores: np.ndarray, threshold: float, gap: int = 0, min_len: int = 1) -> list[tuple[int, int]]:
    """Runs of score >= threshold as half-open intervals, after bridging
    below-threshold runs of at most ``gap`` frames between two segments."""
    on = np.asarray(scores) >= threshold
    runs = []
    t, T = 0, len(on)
    while t < T:
        if on[t]:
            s = t
            while t < T and on[t]:
                t += 1
            runs.append([s, t])
        else:
            t += 1
    merged: list[list[int]] = []
    for s, e in runs:
        if merged and s - merged[-1][1] <= gap:
            merged[-1][1] = e
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged if e - s >= min_len]


def nms(proposals: Sequence[Proposal], iou_threshold: float) -> list[Proposal]:
    """Drop any proposal whose IoU with a better-ranked kept one is >= threshold."""
    kept: list[Proposal] = []
    for p in sorted(proposals, key=lambda p: (-p.confidence, p.start, p.end)):
        if all(interval_iou((p.start, p.end), (k.start, k.end)) < iou_threshold for k in kept):
            kept.append(p)
    return kept


def extract_proposals(scores, thresholds: Sequence[float], gap: int = 1, min_len: int = 1,
                      nms_iou: float = 0.9, branch: str = "") -> list[Proposal]:
    if len(thresholds) == 0:
        raise ValueError("need at least one threshold")
    scores = np.asarray(scores, dtype=np.float64)
    pool = []
    for theta in thresholds:
        for s, e in segments(scores, theta, gap, min_len):
            pool.append(Proposal(s, e, float(scores[s:e].mean()), branch))
    return nms(pool, nms_iou)


def frames_to_seconds(frame: int, fps: float) -> float:
    return float(Fraction(frame) / Fraction(str(fps)))


def prediction_record(video_id: str, label: str, proposals: Sequence[Proposal],
                      units: str = "frames", fps: float = 25.0) -> dict:
    if units == "frames":
        props = [p.as_list() for p in proposals]
    elif units == "seconds":
        props = [[frames_to_seconds(p.start, fps), frames_to_seconds(p.end, fps), p.confidence] for p in proposals]
    else:
        raise ValueError(f"units must be 'frames' or 'seconds', got {units!r}")
    return {"id": video_id, "predicted_label": label, "proposals": props}


def write_predictions(records: Sequence[dict], path) -> None:
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in records))


def read_predictions(path) -> dict[str, dict]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out[rec["id"]] = rec
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed prediction line") from exc
    return out
