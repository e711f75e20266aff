"""Deterministic training loop and the binary checkpoint container.

Every random draw is keyed by (seed, epoch, batch, stream), so resuming from
an epoch checkpoint replays exactly what an uninterrupted run would do.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .datagen import Episode
from .mtlr import COMPONENTS, total_loss
from .network import Network, batch_losses, loss_weights
from .numcore import Adam, NumericalError, Tape

log = logging.getLogger(__name__)

CKPT_MAGIC = b"RTDLCKPT"
CKPT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_checkpoint: Path | None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


# -- checkpoint container ----------------------------------------------------

def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write tensors in name order: magic, version, count, then per tensor
    u16 name length, UTF-8 name, u8 rank, u32 dims, little-endian f32 data."""
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic")
    try:
        version, count = struct.unpack_from("<II", buf, 8)
        if version != CKPT_VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        pos = 16
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            if pos + 4 * size > len(buf):
                raise CheckpointFormatError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt checkpoint") from exc
    if pos != len(buf):
        raise CheckpointFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def network_from_checkpoint(tensors: dict[str, np.ndarray], config: RunConfig) -> Network:
    c_visual = tensors["fusion/embed_v/W"].shape[1]
    c_audio = tensors["fusion/embed_a/W"].shape[1]
    net = Network(config, c_visual, c_audio)
    net.store.load_state({k: v for k, v in tensors.items() if not k.startswith("opt/")})
    return net


# -- training loop -----------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    L_CLS: float
    L_recon: float
    L_KL: float
    L_AICL: float
    L_total: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainResult:
    network: Network
    logs: list[EpochLog] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch:03d}.ckpt"


class Trainer:
    def __init__(self, config: RunConfig, c_visual: int, c_audio: int):
        self.config = config.validate()
        self.network = Network(config, c_visual, c_audio)
        self.optimizer = Adam(lr=config.lr)
        self.epoch = 0

    @classmethod
    def from_checkpoint(cls, path, config: RunConfig) -> "Trainer":
        tensors = load_checkpoint(path)
        net = network_from_checkpoint(tensors, config)
        trainer = cls(config, net.c_visual, net.c_audio)
        trainer.network = net
        trainer.optimizer.load_state({k: v for k, v in tensors.items() if k.startswith("opt/") and k != "opt/epoch"})
        trainer.epoch = int(tensors["opt/epoch"])
        return trainer

    def state(self) -> dict[str, np.ndarray]:
        out = dict(self.network.store.state())
        out.update(self.optimizer.state())
        out["opt/epoch"] = np.array(self.epoch, dtype=np.float32)
        return out

    def run_epoch(self, episodes: Sequence[Episode]) -> EpochLog:
        cfg = self.config
        epoch = self.epoch + 1
        perm = np.random.default_rng([cfg.seed, epoch, 0]).permutation(len(episodes))
        sums = dict.fromkeys(COMPONENTS + ("L_total",), 0.0)
        weights = loss_weights(cfg)
        for b, start in enumerate(range(0, len(episodes), cfg.batch_size)):
            batch = [episodes[i] for i in perm[start:start + cfg.batch_size]]
            mask_rng = np.random.default_rng([cfg.seed, epoch, b + 1, 1])
            hot_rng = np.random.default_rng([cfg.seed, epoch, b + 1, 2])
            with Tape() as tape:
                res = batch_losses(self.network, batch, mask_rng, hot_rng)
                loss = total_loss(res.components, weights)
            grads = tape.backward(loss, self.network.store)
            for name, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise NumericalError(f"non-finite gradient for {name}")
            self.optimizer.step(self.network.store, grads)
            share = len(batch) / len(episodes)
            for k in COMPONENTS:
                sums[k] += share * float(res.components[k].data)
            sums["L_total"] += share * float(loss.data)
        self.epoch = epoch
        return EpochLog(epoch, **sums)

    def fit(self, episodes: Sequence[Episode], out_dir=None,
            on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
        if not episodes:
            raise ValueError("empty training corpus")
        for ep in episodes:
            if (ep.visual.C, ep.audio.C) != (self.network.c_visual, self.network.c_audio):
                raise ValueError(f"{ep.id}: channels ({ep.visual.C}, {ep.audio.C}) do not match the model "
                                 f"({self.network.c_visual}, {self.network.c_audio})")
        # weak supervision: the loop never sees interval annotations
        episodes = [ep.without_intervals() for ep in episodes]
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        result = TrainResult(self.network)
        last_good = out / checkpoint_name(self.epoch) if out is not None and self.epoch else None
        while self.epoch < self.config.epochs:
            try:
                entry = self.run_epoch(episodes)
            except NumericalError as exc:
                raise TrainingDiverged(f"epoch {self.epoch + 1}: {exc}", last_good) from exc
            log.info("epoch %d %s", entry.epoch, entry.to_json())
            result.logs.append(entry)
            if out is not None:
                last_good = out / checkpoint_name(entry.epoch)
                save_checkpoint(last_good, self.state())
                result.checkpoints.append(last_good)
                with open(out / "train_log.jsonl", "a") as fh:
                    fh.write(entry.to_json() + "\n")
            if on_epoch is not None:
                on_epoch(entry)
        return result


def train(corpus: Sequence[Episode], config: RunConfig, out_dir=None, resume=None) -> TrainResult:
    """Train from scratch (or from ``resume`` checkpoint) up to ``config.epochs``."""
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, config)
    else:
        trainer = Trainer(config, corpus[0].visual.C, corpus[0].audio.C)
    return trainer.fit(corpus, out_dir)
