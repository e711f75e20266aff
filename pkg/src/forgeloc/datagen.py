"""Synthetic audio-visual feature corpora and their on-disk formats.

Authentic spans of both modalities are projections of one shared AR(1)
latent. A forged span swaps the affected modality for an independent latent
trajectory plus strong noise, so it is temporally and cross-modally
inconsistent with its surroundings.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LABELS = ("real", "fake-visual", "fake-audio", "fake-both")
MODALITIES = ("visual", "audio")

MAGIC = b"RTDL"
VERSION = 1
_HEADER = struct.Struct("<4sIBII")


class FeatureFormatError(ValueError):
    """Malformed feature container or manifest."""


@dataclass
class FeatureSequence:
    modality: str
    values: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"features must be T x C, got shape {self.values.shape}")
        if self.T < 4 or self.C < 2:
            raise ValueError(f"need T >= 4 and C >= 2, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("features contain NaN/Inf")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def C(self) -> int:
        return self.values.shape[1]


@dataclass
class Episode:
    id: str
    visual: FeatureSequence
    audio: FeatureSequence
    label: str
    # None in train mode: interval annotations are withheld from training.
    gt_intervals: list[tuple[int, int, str]] | None = field(default_factory=list)

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if self.visual.T != self.audio.T:
            raise ValueError(f"{self.id}: visual T={self.visual.T} != audio T={self.audio.T}")
        if self.gt_intervals is not None:
            self.gt_intervals = [(int(s), int(e), str(m)) for s, e, m in self.gt_intervals]
            check_intervals(self.gt_intervals, self.T, self.label)

    @property
    def T(self) -> int:
        return self.visual.T

    @property
    def y(self) -> int:
        """Binary authenticity: 0 real, 1 forged."""
        return int(self.label != "real")

    def without_intervals(self) -> "Episode":
        return replace(self, gt_intervals=None)


def affected_modalities(label: str) -> set[str]:
    return {"real": set(), "fake-visual": {"visual"}, "fake-audio": {"audio"},
            "fake-both": {"visual", "audio"}}[label]


def check_intervals(intervals: Sequence[tuple[int, int, str]], T: int, label: str) -> None:
    for s, e, m in intervals:
        if m not in MODALITIES:
            raise ValueError(f"interval modality {m!r}")
        if not 0 <= s < e <= T:
            raise ValueError(f"interval [{s}, {e}) outside [0, {T})")
    for m in MODALITIES:
        spans = sorted((s, e) for s, e, mm in intervals if mm == m)
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ValueError(f"overlapping {m} intervals")
    tagged = {m for _, _, m in intervals}
    if tagged != affected_modalities(label):
        raise ValueError(f"label {label!r} inconsistent with interval tags {sorted(tagged)}")


@dataclass
class CorpusSpec:
    n_videos: int = 500
    t_range: tuple[int, int] = (120, 120)
    c_visual: int = 16
    c_audio: int = 16
    class_mix: dict[str, float] = field(
        default_factory=lambda: {"real": 0.25, "fake-visual": 0.25, "fake-audio": 0.25, "fake-both": 0.25})
    interval_len: tuple[int, int] = (8, 18)
    sigma_f: float = 2.0
    latent_dim: int = 8
    ar_coef: float = 0.9
    seed: int = 42

    def validate(self) -> None:
        if self.n_videos < 1:
            raise ValueError("n_videos must be >= 1")
        lo, hi = self.t_range
        if not 4 <= lo <= hi:
            raise ValueError(f"bad T range {self.t_range}")
        if min(self.c_visual, self.c_audio) < 2:
            raise ValueError("need at least 2 channels per modality")
        unknown = set(self.class_mix) - set(LABELS)
        if unknown:
            raise ValueError(f"unknown labels in class mix: {sorted(unknown)}")
        if any(p < 0 for p in self.class_mix.values()) or not math.isclose(sum(self.class_mix.values()), 1.0, abs_tol=1e-9):
            raise ValueError("class mix must be non-negative and sum to 1")
        if not 0 < self.ar_coef < 1:
            raise ValueError("AR coefficient must lie in (0, 1)")
        if self.sigma_f <= 0:
            raise ValueError("sigma_f must be positive")
        a, b = self.interval_len
        if not 1 <= a <= b:
            raise ValueError(f"bad interval length range {self.interval_len}")
        if b > lo:
            raise ValueError(f"interval length {b} exceeds shortest video ({lo} frames)")

    def expected_forged_fraction(self) -> float:
        """Expected share of frames forged in at least one modality."""
        p_fake = 1.0 - self.class_mix.get("real", 0.0)
        mean_len = 0.5 * (self.interval_len[0] + self.interval_len[1])
        ts = np.arange(self.t_range[0], self.t_range[1] + 1)
        return float(p_fake * mean_len * np.mean(1.0 / ts))


def _class_counts(mix: dict[str, float], n: int) -> dict[str, int]:
    # largest-remainder apportionment so proportions are exact up to rounding
    raw = {lab: mix.get(lab, 0.0) * n for lab in LABELS}
    counts = {lab: int(math.floor(v)) for lab, v in raw.items()}
    rest = n - sum(counts.values())
    order = sorted(LABELS, key=lambda lab: (-(raw[lab] - counts[lab]), LABELS.index(lab)))
    for lab in order[:rest]:
        counts[lab] += 1
    return counts


def _ar_latent(rng: np.random.Generator, T: int, d: int, a: float) -> np.ndarray:
    z = np.empty((T, d))
    z[0] = rng.standard_normal(d)
    scale = math.sqrt(1.0 - a * a)
    noise = rng.standard_normal((T, d))
    for t in range(1, T):
        z[t] = a * z[t - 1] + scale * noise[t]
    return z


def generate_corpus(spec: CorpusSpec) -> list[Episode]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d = spec.latent_dim
    proj = {
        "visual": rng.standard_normal((d, spec.c_visual)) / math.sqrt(d),
        "audio": rng.standard_normal((d, spec.c_audio)) / math.sqrt(d),
    }
    counts = _class_counts(spec.class_mix, spec.n_videos)
    labels = [lab for lab in LABELS for _ in range(counts[lab])]
    labels = [labels[i] for i in rng.permutation(len(labels))]

    episodes = []
    for n, label in enumerate(labels):
        T = int(rng.integers(spec.t_range[0], spec.t_range[1] + 1))
        z = _ar_latent(rng, T, d, spec.ar_coef)
        feats = {m: z @ proj[m] + 0.1 * rng.standard_normal((T, proj[m].shape[1])) for m in MODALITIES}
        intervals = []
        affected = affected_modalities(label)
        if affected:
            length = int(rng.integers(spec.interval_len[0], spec.interval_len[1] + 1))
            start = int(rng.integers(0, T - length + 1))
            # fake-both manipulates the same span in both streams
            for m in MODALITIES:
                if m not in affected:
                    continue
                z_fake = _ar_latent(rng, length, d, spec.ar_coef)
                noise = rng.standard_normal((length, proj[m].shape[1]))
                feats[m][start:start + length] = z_fake @ proj[m] + spec.sigma_f * noise
                intervals.append((start, start + length, m))
        episodes.append(Episode(
            id=f"vid{n:05d}",
            visual=FeatureSequence("visual", feats["visual"]),
            audio=FeatureSequence("audio", feats["audio"]),
            label=label,
            gt_intervals=intervals,
        ))
    return episodes


def forged_mask(ep: Episode, modality: str | None = None) -> np.ndarray:
    """Boolean per-frame mask of forged frames (either modality if None)."""
    if ep.gt_intervals is None:
        raise ValueError(f"{ep.id}: intervals not available in train mode")
    mask = np.zeros(ep.T, dtype=bool)
    for s, e, m in ep.gt_intervals:
        if modality is None or m == modality:
            mask[s:e] = True
    return mask


def forged_fraction(episodes: Iterable[Episode]) -> float:
    forged = total = 0
    for ep in episodes:
        forged += int(forged_mask(ep).sum())
        total += ep.T
    return forged / total if total else 0.0


def corpus_stats(episodes: Sequence[Episode]) -> dict:
    mix = {lab: 0 for lab in LABELS}
    for ep in episodes:
        mix[ep.label] += 1
    return {"n_videos": len(episodes), "class_counts": mix,
            "forged_fraction": forged_fraction(episodes)}


def reference_corpus(seed: int = 42) -> tuple[list[Episode], list[Episode]]:
    """400 train / 100 test episodes, T=120, C=16, ~8% forged frames."""
    episodes = generate_corpus(CorpusSpec(n_videos=500, seed=seed))
    return episodes[:400], episodes[400:]


# -- feature container -------------------------------------------------------

def write_feature_file(seq: FeatureSequence, path) -> None:
    header = _HEADER.pack(MAGIC, VERSION, MODALITIES.index(seq.modality), seq.T, seq.C)
    payload = seq.values.astype("<f4", copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_feature_file(path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, version, mod, T, C = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    if mod >= len(MODALITIES):
        raise FeatureFormatError(f"{path}: bad modality code {mod}")
    expected = _HEADER.size + 4 * T * C
    if len(raw) != expected:
        raise FeatureFormatError(f"{path}: declared {expected} bytes, file has {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(T, C)
    return FeatureSequence(MODALITIES[mod], values.astype(np.float32))


# -- manifest ----------------------------------------------------------------

def write_manifest(episodes: Sequence[Episode], path, feature_dir: str = "features") -> None:
    """Write feature files under ``feature_dir`` (relative to the manifest)
    and one JSON line per episode."""
    path = Path(path)
    root = path.parent
    (root / feature_dir).mkdir(parents=True, exist_ok=True)
    lines = []
    for ep in episodes:
        if ep.gt_intervals is None:
            raise ValueError(f"{ep.id}: cannot write a manifest from train-mode episodes")
        vis = f"{feature_dir}/{ep.id}_visual.rtdl"
        aud = f"{feature_dir}/{ep.id}_audio.rtdl"
        write_feature_file(ep.visual, root / vis)
        write_feature_file(ep.audio, root / aud)
        lines.append(json.dumps({
            "id": ep.id, "label": ep.label, "visual_file": vis, "audio_file": aud,
            "gt_intervals": [[s, e, m] for s, e, m in ep.gt_intervals],
        }))
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path, mode: str = "eval") -> list[Episode]:
    """Load episodes. ``mode="train"`` strips interval annotations."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    path = Path(path)
    root = path.parent
    episodes = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            vis_path = root / rec["visual_file"]
            aud_path = root / rec["audio_file"]
            ident, label = rec["id"], rec["label"]
            intervals = [tuple(iv) for iv in rec.get("gt_intervals", [])]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FeatureFormatError(f"{path}:{lineno}: malformed manifest line") from exc
        for p in (vis_path, aud_path):
            if not p.is_file():
                raise FeatureFormatError(f"{path}:{lineno}: missing feature file {p}")
        try:
            ep = Episode(ident, read_feature_file(vis_path), read_feature_file(aud_path), label, intervals)
        except FeatureFormatError:
            raise
        except ValueError as exc:
            raise FeatureFormatError(f"{path}:{lineno}: {exc}") from exc
        episodes.append(ep.without_intervals() if mode == "train" else ep)
    return episodes
