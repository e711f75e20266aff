"""Input checks for the estimator front end."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .datagen import LABELS, Episode, FeatureSequence


def check_features(visual, audio, name: str = "sample") -> tuple[np.ndarray, np.ndarray]:
    """Coerce one (visual, audio) pair to float32 T x C arrays and validate it."""
    v = np.asarray(getattr(visual, "values", visual), dtype=np.float32)
    a = np.asarray(getattr(audio, "values", audio), dtype=np.float32)
    for tag, arr in (("visual", v), ("audio", a)):
        if arr.ndim != 2:
            raise ValueError(f"{name}: {tag} features must be 2-D (T, C), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}: {tag} features contain NaN or Inf")
    if v.shape[0] != a.shape[0]:
        raise ValueError(f"{name}: visual has {v.shape[0]} frames, audio {a.shape[0]}")
    return v, a


def check_labels(y, n: int) -> list[str]:
    labels = [str(lab) for lab in y]
    if len(labels) != n:
        raise ValueError(f"{n} samples but {len(labels)} labels")
    bad = sorted(set(labels) - set(LABELS))
    if bad:
        raise ValueError(f"unknown labels {bad}; expected a subset of {list(LABELS)}")
    return labels


def as_episodes(X, y=None) -> list[Episode]:
    """Accept Episodes or (visual, audio) pairs; ``y`` overrides stored labels.

    Raw pairs without ``y`` get a placeholder "real" label, which only
    matters for training.
    """
    X = [X] if isinstance(X, Episode) else list(X)
    if not X:
        raise ValueError("empty input")
    labels = check_labels(y, len(X)) if y is not None else None
    out = []
    for i, item in enumerate(X):
        if isinstance(item, Episode):
            ep = item
            if labels is not None and labels[i] != ep.label:
                ep = Episode(ep.id, ep.visual, ep.audio, labels[i], None)
        else:
            try:
                visual, audio = item
            except (TypeError, ValueError) as exc:
                raise ValueError(f"sample {i}: expected an Episode or a (visual, audio) pair") from exc
            v, a = check_features(visual, audio, f"sample {i}")
            label = labels[i] if labels is not None else "real"
            ep = Episode(f"sample_{i:05d}", FeatureSequence("visual", v), FeatureSequence("audio", a), label, None)
        out.append(ep)
    return out


def check_channels(episodes: Sequence[Episode], c_visual: int, c_audio: int) -> None:
    for ep in episodes:
        if (ep.visual.C, ep.audio.C) != (c_visual, c_audio):
            raise ValueError(f"{ep.id}: channels ({ep.visual.C}, {ep.audio.C}) but the model was fit "
                             f"on ({c_visual}, {c_audio})")
