"""Command-line interface: synth, train, localize, eval, inspect.

Configuration precedence: built-in defaults < ``--config`` JSON file <
explicit flags. The effective configuration is written next to every output.

Exit codes: 0 success, 2 configuration/usage error, 3 data-format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, config_schema
from .datagen import (
    CorpusSpec, FeatureFormatError, corpus_stats, forged_mask, generate_corpus, read_manifest,
    write_manifest,
)
from .localize import prediction_record, read_predictions, write_predictions
from .metrics import MetricsError, evaluate, gt_from_intervals
from .numcore import NumericalError
from .pipeline import error_curves, predict_episodes
from .training import CheckpointFormatError, Trainer, TrainingDiverged, load_checkpoint, network_from_checkpoint

log = logging.getLogger("forgeloc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# flags that map one-to-one onto RunConfig fields
CONFIG_FLAGS = {
    "epochs": int, "lr": float, "batch_size": int, "seed": int, "mask_ratio": float,
    "hotspot_k": int, "margin": float, "dim": int, "dec_dim": int, "workers": int,
    "rec_score_weight": float, "gap": int, "min_len": int, "nms_iou": float, "fps": float,
}


def add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file (see `forgeloc schema`)")
    for name, typ in CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def effective_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.override(**{k: getattr(args, k, None) for k in CONFIG_FLAGS})


def prepare_dir(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"{path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_episodes(manifest: Path, mode: str = "eval"):
    try:
        return read_manifest(manifest, mode)
    except FileNotFoundError as exc:
        raise DataError(f"missing file: {exc.filename or manifest}") from exc


def load_network(checkpoint: Path, cfg: RunConfig):
    try:
        return network_from_checkpoint(load_checkpoint(checkpoint), cfg)
    except FileNotFoundError as exc:
        raise DataError(f"missing checkpoint {checkpoint}") from exc
    except KeyError as exc:
        raise DataError(f"checkpoint {checkpoint} lacks tensor {exc}") from exc


def check_dims(net, episodes) -> None:
    for ep in episodes:
        if (ep.visual.C, ep.audio.C) != (net.c_visual, net.c_audio):
            raise DataError(f"{ep.id}: features have ({ep.visual.C}, {ep.audio.C}) channels, "
                            f"checkpoint expects ({net.c_visual}, {net.c_audio})")


# -- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = CorpusSpec(n_videos=args.n_videos, t_range=(args.t_min, args.t_max), c_visual=args.c_visual,
                      c_audio=args.c_audio, sigma_f=args.sigma_f, seed=args.seed)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    n_test = args.n_test if args.n_test is not None else spec.n_videos // 5
    if not 0 <= n_test < spec.n_videos:
        raise UsageError(f"--n-test must lie in [0, {spec.n_videos})")
    out = prepare_dir(args.out, args.force)
    episodes = generate_corpus(spec)
    split = spec.n_videos - n_test
    write_manifest(episodes, out / "manifest.jsonl")
    write_manifest(episodes[:split], out / "train.jsonl")
    write_manifest(episodes[split:], out / "test.jsonl")
    spec_dict = asdict(spec)
    (out / "corpus.json").write_text(json.dumps(spec_dict, indent=2, sort_keys=True) + "\n")
    stats = corpus_stats(episodes)
    stats["expected_forged_fraction"] = spec.expected_forged_fraction()
    stats["n_train"], stats["n_test"] = split, n_test
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = effective_config(args)
    episodes = load_episodes(args.corpus, "train")
    if args.resume is not None:
        trainer = Trainer.from_checkpoint(args.resume, cfg)
        check_dims(trainer.network, episodes)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
    else:
        out = prepare_dir(args.out, args.force)
        trainer = Trainer(cfg, episodes[0].visual.C, episodes[0].audio.C)
        check_dims(trainer.network, episodes)
    cfg.save(out / "config.json")
    trainer.fit(episodes, out, on_epoch=lambda e: print(e.to_json(), flush=True))
    return EXIT_OK


def cmd_localize(args) -> int:
    cfg = effective_config(args)
    net = load_network(args.checkpoint, cfg)
    episodes = load_episodes(args.manifest)
    check_dims(net, episodes)
    if args.out.exists() and not args.force:
        raise UsageError(f"{args.out} exists (use --force to overwrite)")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    records = []
    for pred in predict_episodes(net, episodes, workers=cfg.workers):
        log.info("%s -> %s (%s branch, %d proposals)", pred.id, pred.decision.label,
                 pred.decision.branch, len(pred.proposals))
        records.append(prediction_record(pred.id, pred.decision.label, pred.proposals, args.units, cfg.fps))
    write_predictions(records, args.out)
    cfg.save(args.out.with_name(args.out.stem + ".config.json"))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = effective_config(args)
    try:
        records = read_predictions(args.predictions)
    except FileNotFoundError as exc:
        raise DataError(f"missing predictions file {args.predictions}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    episodes = load_episodes(args.manifest)
    gt = {}
    for ep in episodes:
        if ep.gt_intervals is None:
            raise DataError(f"{ep.id}: manifest carries no interval annotations")
        gt[ep.id] = gt_from_intervals(ep.gt_intervals)
    scale = cfg.fps if args.units == "seconds" else 1.0
    preds = {vid: [(s * scale, e * scale, c) for s, e, c in rec["proposals"]]
             for vid, rec in records.items() if vid in gt}
    unknown = sorted(set(records) - set(gt))
    if unknown:
        log.warning("%d predicted ids not in the manifest (e.g. %s)", len(unknown), unknown[0])
    report = evaluate(preds, gt).to_json()
    text = json.dumps(report, indent=2)
    print(text)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text + "\n")
        cfg.save(args.out.with_name(args.out.stem + ".config.json"))
    return EXIT_OK


def _minmax(x: np.ndarray) -> np.ndarray:
    span = float(x.max() - x.min())
    return np.zeros_like(x) if span == 0 else (x - x.min()) / span


def cmd_inspect(args) -> int:
    cfg = effective_config(args)
    net = load_network(args.checkpoint, cfg)
    episodes = {ep.id: ep for ep in load_episodes(args.manifest)}
    if args.id not in episodes:
        raise DataError(f"unknown episode id {args.id!r}")
    ep = episodes[args.id]
    check_dims(net, [ep])
    curves = error_curves(net, ep)
    header = ["frame", "visual_err", "audio_err", "visual_err_norm", "audio_err_norm"]
    cols = [np.arange(ep.T), curves["visual"], curves["audio"], _minmax(curves["visual"]), _minmax(curves["audio"])]
    if ep.gt_intervals is not None:
        header += ["gt_visual", "gt_audio"]
        cols += [forged_mask(ep, "visual").astype(int), forged_mask(ep, "audio").astype(int)]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([int(row[0])] + [f"{v:.6g}" if isinstance(v, (float, np.floating)) else int(v)
                                             for v in row[1:]])
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(config_schema(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forgeloc", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-videos", type=int, default=500)
    p.add_argument("--n-test", type=int, default=None, help="held-out episodes (default: last 20%%)")
    p.add_argument("--t-min", type=int, default=120)
    p.add_argument("--t-max", type=int, default=120)
    p.add_argument("--c-visual", type=int, default=16)
    p.add_argument("--c-audio", type=int, default=16)
    p.add_argument("--sigma-f", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a manifest (interval annotations are ignored)")
    p.add_argument("--corpus", type=Path, required=True, help="manifest JSON-lines file")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    p.add_argument("--force", action="store_true")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("localize", help="write ranked forgery proposals")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--units", choices=("frames", "seconds"), default="frames")
    p.add_argument("--force", action="store_true")
    add_config_flags(p)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("eval", help="score predictions against manifest intervals")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--units", choices=("frames", "seconds"), default="frames")
    add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="per-frame reconstruction-error curves as CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--out", type=Path, required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("schema", help="print the config-file JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (TrainingDiverged, NumericalError) as exc:
        last = getattr(exc, "last_checkpoint", None)
        log.error("numerical failure: %s%s", exc, f" (last good checkpoint: {last})" if last else "")
        return EXIT_NUMERIC
    except (DataError, FeatureFormatError, CheckpointFormatError, MetricsError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
