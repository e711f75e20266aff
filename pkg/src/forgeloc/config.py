"""Run configuration: defaults, JSON loading, and flag overrides.

Precedence (lowest to highest): built-in defaults, config file, CLI flags.
Unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

HEAD_IDS = ("H1", "H2", "H3", "H4", "H5", "H6", "H7")


class ConfigError(ValueError):
    pass


def _default_thresholds() -> list[float]:
    return [round(0.10 + 0.05 * i, 2) for i in range(17)]


@dataclass
class RunConfig:
    # model
    dim: int = 64
    dec_dim: int = 32
    enc_layers: int = 2
    dec_layers: int = 1
    heads: int = 4
    mlp_ratio: int = 2
    # forgery discovery / contrastive
    mask_ratio: float = 0.75
    hotspot_k: int = 10
    margin: float = 1.0
    error_repeats: int = 4
    # multi-task heads
    mil_ratio: float = 0.125
    lambda_cls: float = 1.0
    lambda_recon: float = 0.1
    lambda_kl: float = 0.1
    lambda_aicl: float = 0.1
    head_weights: list[float] = field(default_factory=lambda: [0.8] + [0.1] * 6)
    # localisation
    thresholds: list[float] = field(default_factory=_default_thresholds)
    gap: int = 1
    min_len: int = 1
    nms_iou: float = 0.9
    rec_score_weight: float = 0.0
    fps: float = 25.0
    # optimisation
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    workers: int = 1

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for name in ("dim", "dec_dim", "heads", "mlp_ratio", "batch_size", "epochs", "hotspot_k",
                     "error_repeats", "workers", "min_len"):
            need(int(getattr(self, name)) == getattr(self, name) and getattr(self, name) >= 1,
                 f"{name} must be a positive integer")
        need(self.enc_layers >= 1 and self.dec_layers >= 1, "need at least one encoder and decoder layer")
        need(self.dim % 2 == 0 and self.dec_dim % 2 == 0, "embedding widths must be even")
        need(self.dim % self.heads == 0 and self.dec_dim % self.heads == 0,
             "widths must divide evenly into attention heads")
        need(0 < self.mask_ratio < 1, "mask_ratio must lie in (0, 1)")
        need(0 < self.mil_ratio <= 1, "mil_ratio must lie in (0, 1]")
        need(self.margin >= 0, "margin must be non-negative")
        need(self.gap >= 0, "gap must be non-negative")
        need(len(self.head_weights) == len(HEAD_IDS), "need exactly seven head weights")
        for name in ("lambda_cls", "lambda_recon", "lambda_kl", "lambda_aicl"):
            need(getattr(self, name) >= 0 and math.isfinite(getattr(self, name)), f"{name} must be >= 0")
        need(self.lr > 0, "lr must be positive")
        need(len(self.thresholds) > 0, "thresholds must be non-empty")
        need(all(0 <= t <= 1 for t in self.thresholds), "thresholds must lie in [0, 1]")
        need(0 < self.nms_iou <= 1, "nms_iou must lie in (0, 1]")
        need(0 <= self.rec_score_weight <= 1, "rec_score_weight must lie in [0, 1]")
        need(self.fps > 0, "fps must be positive")
        return self

    def k_mil(self, T: int) -> int:
        return max(1, math.ceil(T * self.mil_ratio))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    def override(self, **updates) -> "RunConfig":
        data = self.to_dict()
        data.update({k: v for k, v in updates.items() if v is not None})
        return RunConfig.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)


def config_schema() -> dict:
    """JSON schema describing the config file."""
    props = {}
    for f in fields(RunConfig):
        if f.type.startswith("list"):
            props[f.name] = {"type": "array", "items": {"type": "number"}}
        else:
            props[f.name] = {"type": "integer" if f.type == "int" else "number"}
    return {"$schema": "https://json-schema.org/draft/2020-12/schema", "type": "object",
            "properties": props, "additionalProperties": False}
