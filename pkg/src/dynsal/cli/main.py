#!/usr/bin/env python3
"""Attentive CNN-convLSTM video saliency: synthesize, train, predict, evaluate.

Commands:
    synth      write a synthetic moving-blob dataset
    train      train a model on one or more datasets
    predict    write per-frame saliency maps for videos
    eval       score predictions against a dataset's fixations
    selfcheck  run the oracle property suites
    ablate     compare the default model with one variant over several seeds

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.

Usage:
    dynsal synth --out data/toy --videos 2 --frames 24 --size 96 --seed 7
    dynsal train --data data/toy --out runs/toy
    dynsal predict --ckpt runs/toy --data data/toy --out preds
    dynsal eval --pred preds --gt data/toy --out report.txt
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dynsal import config as cfg
from dynsal.cli.manifest import MANIFEST_FILE, RunManifest
from dynsal.cli.selfcheck import run_selfcheck
from dynsal.data import SynthConfig, load_video_dir, open_dataset, synthesize_dataset
from dynsal.data.dataset import carve_validation, frame_filename
from dynsal.errors import DataError, NumericalError, SaliencyError, UsageError
from dynsal.metrics import evaluate_dataset, format_report, write_report
from dynsal.metrics.scores import DEFAULT_SPLITS
from dynsal.model import ModelConfig, load_checkpoint, predict_maps
from dynsal.model.network import PREDICTION_SOURCES
from dynsal.tensor.codec import write_stns
from dynsal.train import TrainConfig, model_nss, train, validation_ids

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"
ABLATION_FILE = "ablation.tsv"
VARIANTS = {
    "no-attention": {"attention": False},
    "no-residual": {"residual": False},
    "no-pooling": {"attention_pooling": False},
    "no-recurrence": {"recurrent": False},
}
DEFAULT_ABLATION_SEEDS = "0,1,2,3,4"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger("dynsal").setLevel(level)


def _load_configs(path: Optional[str], seed: Optional[int]) -> tuple[TrainConfig, ModelConfig]:
    if path is None:
        train_config, model_config = TrainConfig(), ModelConfig()
    else:
        train_config, model_config = cfg.load_config(path, TrainConfig, ModelConfig)
    if seed is not None:
        train_config = dataclasses.replace(train_config, seed=seed)
    return train_config, model_config


def _open_all(paths: Optional[Sequence[str]]):
    return [open_dataset(p) for p in paths or ()]


def _joined(paths: Optional[Sequence[str]]) -> str:
    return ",".join(str(p) for p in paths or ())


def _prepare_dir(path: Path, force: bool) -> None:
    if path.exists() and not path.is_dir():
        raise UsageError(f"output path exists and is not a directory: {path}")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise UsageError(f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    config = SynthConfig(
        videos=args.videos,
        frames=args.frames,
        size=args.size,
        seed=args.seed,
        observers=args.observers,
        blobs=args.blobs,
        kind=args.kind,
    )
    summary = synthesize_dataset(args.out, config, force=args.force)
    RunManifest(
        command="synth",
        seed=config.seed,
        outputs={"out": str(args.out)},
        configs=[config],
    ).write(Path(args.out) / MANIFEST_FILE)
    print(
        f"wrote {summary.videos} videos, {summary.frames} frames, "
        f"{summary.fixations} fixations to {summary.root}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    train_config, model_config = _load_configs(args.config, args.seed)
    videos = _open_all(args.data)
    static = _open_all(args.static)
    out = Path(args.out)
    result = train(model_config, videos, static, train_config, out_dir=out)
    RunManifest(
        command="train",
        seed=train_config.seed,
        inputs={"data": _joined(args.data), "static": _joined(args.static), "config": args.config or ""},
        outputs={"out": str(out)},
        configs=[train_config, model_config],
    ).write(out / MANIFEST_FILE)
    status = "stopped early" if result.stopped_early else "completed"
    print(
        f"training {status} after {result.epochs_run} epochs; best epoch {result.best_epoch} "
        f"(validation loss {result.best_val_loss:.6f}); checkpoint in {out}"
    )
    return 0


def _video_dirs(args: argparse.Namespace) -> list[Path]:
    dirs = [Path(v) for v in args.video or ()]
    for root in args.data or ():
        dataset = open_dataset(root)
        ids = dataset.split.get(args.split) if args.split else dataset.video_ids
        dirs.extend(dataset.video_dir(vid) for vid in ids)
    if not dirs:
        raise UsageError("predict needs at least one --video or --data")
    names = [d.name for d in dirs]
    if len(set(names)) != len(names):
        raise UsageError("two input videos share a directory name")
    return dirs


def cmd_predict(args: argparse.Namespace) -> int:
    model_config, params = load_checkpoint(args.ckpt)
    out = Path(args.out)
    side = model_config.input_size
    total = 0
    for video_dir in _video_dirs(args):
        frames = load_video_dir(video_dir)
        if frames.shape[1:3] != (side, side):
            raise DataError(
                f"{video_dir}: frames are {frames.shape[2]}x{frames.shape[1]}, "
                f"checkpoint {args.ckpt} expects {side}x{side}"
            )
        target = out / video_dir.name
        _prepare_dir(target, args.force)
        maps = predict_maps(frames, params, model_config, source=args.source)
        for t, saliency in enumerate(maps):
            write_stns(target / frame_filename(t), np.clip(saliency, 0.0, 1.0))
        total += len(maps)
        logger.info("predicted %d %s maps for %s", len(maps), args.source, video_dir)
    RunManifest(
        command="predict",
        inputs={"ckpt": str(args.ckpt), "video": _joined(args.video), "data": _joined(args.data)},
        outputs={"out": str(out)},
        configs=[model_config],
    ).write(out / MANIFEST_FILE)
    print(f"wrote {total} {args.source} maps to {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    report = evaluate_dataset(
        args.pred,
        args.gt,
        shuffle_pool_dir=args.shuffle_pool,
        split=args.split,
        splits=args.splits,
        seed=args.seed,
        workers=args.workers,
    )
    text_path, values_path = write_report(report, args.out)
    RunManifest(
        command="eval",
        seed=args.seed,
        inputs={"pred": str(args.pred), "gt": str(args.gt), "shuffle_pool": str(args.shuffle_pool or "")},
        outputs={"report": str(text_path), "values": str(values_path)},
    ).write(text_path.with_name(text_path.name + ".manifest"))
    print(format_report(report))
    return 0


def cmd_selfcheck(args: argparse.Namespace) -> int:
    report = run_selfcheck(seed=args.seed, instances=args.instances)
    print(report.format())
    if not report.passed:
        first = report.failures[0]
        raise NumericalError(f"selfcheck failed: {len(report.failures)} properties, first: {first}")
    return 0


def _parse_seeds(raw: str) -> list[int]:
    try:
        seeds = [int(s) for s in raw.split(",") if s.strip()]
    except ValueError as e:
        raise UsageError(f"--seeds must be comma-separated integers, got {raw!r}") from e
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def cmd_ablate(args: argparse.Namespace) -> int:
    train_config, base_model = _load_configs(args.config, None)
    variant_model = dataclasses.replace(base_model, **VARIANTS[args.variant])
    seeds = _parse_seeds(args.seeds)
    videos = _open_all(args.data)
    static = _open_all(args.static)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows: list[tuple[str, int, float]] = []
    for seed in seeds:
        run_config = dataclasses.replace(train_config, seed=seed)
        scored = [dataclasses.replace(ds, split=carve_validation(ds.split, seed)) for ds in videos]
        ids = validation_ids(scored)
        for label, model_config in (("default", base_model), (args.variant, variant_model)):
            result = train(model_config, videos, static, run_config, out_dir=out / label / f"seed{seed}")
            nss = model_nss(result.params, model_config, scored, ids)
            logger.info("seed %d %s: validation NSS %.4f", seed, label, nss)
            rows.append((label, seed, nss))

    lines = ["model\tseed\tnss"] + [f"{label}\t{seed}\t{nss!r}" for label, seed, nss in rows]
    (out / ABLATION_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    RunManifest(
        command="ablate",
        seed=seeds[0],
        inputs={"data": _joined(args.data), "static": _joined(args.static), "config": args.config or ""},
        outputs={"out": str(out), "seeds": ",".join(map(str, seeds)), "variant": args.variant},
        configs=[train_config, base_model],
    ).write(out / MANIFEST_FILE)

    for label in ("default", args.variant):
        values = [nss for name, _, nss in rows if name == label]
        print(f"{label:<14} mean validation NSS {np.mean(values):.4f} over {len(values)} seeds")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="dynsal",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    noise.add_argument("--quiet", action="store_true", help="Log warnings and errors only")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    p = commands.add_parser("synth", help="Write a synthetic dataset")
    p.add_argument("--out", required=True, help="Output dataset directory")
    p.add_argument("--videos", type=int, default=2)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--size", type=int, default=96, help="Frame side in pixels")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--observers", type=int, default=8)
    p.add_argument("--blobs", type=int, default=1)
    p.add_argument("--kind", choices=("video", "static"), default="video")
    p.add_argument("--force", action="store_true", help="Overwrite a non-empty output directory")
    p.set_defaults(handler=cmd_synth)

    p = commands.add_parser("train", help="Train a model")
    p.add_argument("--data", action="append", required=True, help="Video dataset directory (repeatable)")
    p.add_argument("--static", action="append", help="Static image dataset directory (repeatable)")
    p.add_argument("--config", help="key = value config file or a run manifest")
    p.add_argument("--out", required=True, help="Checkpoint directory")
    p.add_argument("--seed", type=int, help="Override the config seed")
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("predict", help="Write saliency maps for videos")
    p.add_argument("--ckpt", required=True, help="Checkpoint directory")
    p.add_argument("--video", action="append", help="Directory of frame_XXXXX.stns files (repeatable)")
    p.add_argument("--data", action="append", help="Predict every video of a dataset (repeatable)")
    p.add_argument("--split", choices=("train", "val", "test"), help="Restrict --data to one split")
    p.add_argument("--out", required=True, help="Output directory; maps go to OUT/<video>/")
    p.add_argument("--source", choices=PREDICTION_SOURCES, default="saliency")
    p.add_argument("--force", action="store_true", help="Overwrite non-empty video output directories")
    p.set_defaults(handler=cmd_predict)

    p = commands.add_parser("eval", help="Score predictions against ground truth")
    p.add_argument("--pred", required=True, help="Prediction directory")
    p.add_argument("--gt", required=True, help="Ground-truth dataset directory")
    p.add_argument("--out", required=True, help="Report file; values go to FILE.values")
    p.add_argument("--shuffle-pool", help="Dataset providing shuffled-AUC negatives (default: --gt)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", type=int, default=DEFAULT_SPLITS, help="Shuffled-AUC negative draws")
    p.add_argument("--split", choices=("train", "val", "test"), help="Score one split only")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("selfcheck", help="Run the oracle property suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, help="Cap on instances per suite")
    p.set_defaults(handler=cmd_selfcheck)

    p = commands.add_parser("ablate", help="Compare the default model with a variant")
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--static", action="append")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default=DEFAULT_ABLATION_SEEDS, help="Comma-separated seeds")
    p.add_argument("--variant", choices=sorted(VARIANTS), default="no-attention")
    p.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except SaliencyError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
