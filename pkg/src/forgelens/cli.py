"""Command-line entry point wiring the pipeline end to end.

Subcommands: fixture (synthetic dataset), ela (residual preprocessing),
train (checkpointed runs), eval (score a checkpoint), knn (feature
extraction + neighbor grid search).

Exit codes are a stable scripting contract: 0 success, 1 runtime
failure (corrupt files, aborted runs, I/O), 2 usage or configuration
error. All randomness flows from --seed; each consumer derives an
independent stream by hashing "seed:purpose" (purposes look like
"split", "init:swin_toy", "shuffle:3"), so runs are reproducible
single-threaded regardless of module call order.

Every run writes run_manifest.json (subcommand, resolved config, seed,
timestamps, artifact paths) beside its outputs. Timestamps make this
one file non-reproducible by design; every other artifact is
byte-stable for equal flags and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import load_arrays
from .data import load_batch, make_fixture_dataset, scan_dataset, split_records
from .ela import ElaConfig, batch_preprocess
from .exceptions import (CodecError, ConfigError, IntegrityError, ShapeError,
                         TrainingAborted)
from .knn import METRICS, WEIGHTINGS, fit as knn_fit, grid_search
from .training import (TrainConfig, build_model, evaluate,
                       load_run_checkpoint, load_train_config, run_training)

__all__ = ["main", "build_parser"]


def _write_run_manifest(out_dir: Path, subcommand: str, config: dict,
                        seed, artifacts: list[str], started: float) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "artifacts": sorted(artifacts),
    }
    with open(out_dir / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_fixture(args) -> int:
    started = time.time()
    out = Path(args.out)
    make_fixture_dataset(out, n_per_class=args.n_per_class,
                         seed=args.seed, image_size=args.image_size)
    _write_run_manifest(out, "fixture",
                        {"n_per_class": args.n_per_class,
                         "image_size": args.image_size},
                        args.seed, ["real/", "fake/", "fixture_meta.json"], started)
    print(json.dumps({"out": str(out), "n_per_class": args.n_per_class,
                      "seed": args.seed}, sort_keys=True))
    return 0


def cmd_ela(args) -> int:
    started = time.time()
    cfg = ElaConfig(quality=args.quality, subsampling=args.subsampling)
    out = Path(args.out)
    report = batch_preprocess(args.src, out, cfg, threads=args.threads)
    _write_run_manifest(out, "ela",
                        {"quality": args.quality, "subsampling": args.subsampling},
                        None, ["ela_report.json"], started)
    print(json.dumps(report, sort_keys=True))
    return 1 if report["failed"] else 0


def cmd_train(args) -> int:
    started = time.time()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = load_train_config(args.config, **overrides)
    out = Path(args.out)
    run_training(cfg, args.data, out, resume=args.resume, log=print)
    _write_run_manifest(out, "train", asdict(cfg), cfg.seed,
                        ["checkpoint.fgl", "metrics.csv", "metrics.json",
                         "manifest.jsonl", "config.json"], started)
    return 0


def _load_model_from_checkpoint(path):
    """Rebuild the trained model from a run checkpoint."""
    _, header = load_arrays(path)
    cfg = TrainConfig(**header["config"])
    model = build_model(cfg)
    load_run_checkpoint(path, model, optimizer=None)
    model.eval()
    return model, cfg, header


def cmd_eval(args) -> int:
    started = time.time()
    model, cfg, header = _load_model_from_checkpoint(args.checkpoint)
    manifest = split_records(scan_dataset(args.data), cfg.split_ratio, cfg.seed)
    records = manifest.for_split(args.split)
    row = evaluate(model, records, cfg, epoch=int(header["extra"].get("epoch_next", 0)),
                   split=args.split)
    payload = {"split": args.split, "epoch": row.epoch,
               "mean_loss": row.mean_loss, "accuracy": row.accuracy,
               "n_samples": len(records), "model": cfg.model,
               "positive_class": "fake"}
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    export_path = out / f"eval_{args.split}.json"
    with open(export_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_manifest(out, "eval", asdict(cfg), cfg.seed,
                        [export_path.name], started)
    print(json.dumps(payload, sort_keys=True))
    return 0


def _parse_grid(spec: str):
    """"full" or colon-separated comma lists "metrics:weightings:ks"."""
    if spec == "full":
        return METRICS, WEIGHTINGS, (1, 3, 5)
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(
            f"grid must be 'full' or 'metrics:weightings:ks', got {spec!r}")
    metrics = tuple(p for p in parts[0].split(",") if p)
    weightings = tuple(p for p in parts[1].split(",") if p)
    try:
        ks = tuple(int(k) for k in parts[2].split(",") if k)
    except ValueError as exc:
        raise ConfigError(f"bad k list in grid {spec!r}") from exc
    if not metrics or not weightings or not ks:
        raise ConfigError(f"grid {spec!r} has an empty axis")
    return metrics, weightings, ks


def _extract_features(model, records, cfg: TrainConfig):
    model.eval()
    feats, labels = [], []
    for start in range(0, len(records), cfg.batch_size):
        idx = np.arange(start, min(start + cfg.batch_size, len(records)))
        x, y = load_batch(records, idx, image_size=cfg.image_size)
        _, f = model.forward(x)
        feats.append(f.data)
        labels.append(y)
    return np.concatenate(feats), np.concatenate(labels)


def cmd_knn(args) -> int:
    started = time.time()
    model, cfg, header = _load_model_from_checkpoint(args.extractor_checkpoint)
    manifest = split_records(scan_dataset(args.data), cfg.split_ratio, cfg.seed)
    extractor_id = f"{cfg.model}:{header.get('extra', {}).get('run_id', '')}"

    train_f, train_y = _extract_features(model, manifest.for_split("train"), cfg)
    test_f, test_y = _extract_features(model, manifest.for_split("test"), cfg)
    store_train = knn_fit(train_f, train_y, extractor_id)
    store_test = knn_fit(test_f, test_y, extractor_id)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store_train.save(out / "features_train.fstore")
    store_test.save(out / "features_test.fstore")

    metrics, weightings, ks = _parse_grid(args.grid)
    table = grid_search(store_train, store_test, metrics, weightings, ks)
    with open(out / "knn_grid.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("metric,weighting,k,accuracy\n")
        for row in table:
            fh.write(f"{row['metric']},{row['weighting']},{row['k']},"
                     f"{row['accuracy']!r}\n")
    best = table[0]
    with open(out / "knn_best.json", "w", encoding="utf-8") as fh:
        json.dump(best, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_manifest(out, "knn", asdict(cfg), cfg.seed,
                        ["features_train.fstore", "features_test.fstore",
                         "knn_grid.csv", "knn_best.json"], started)
    print(json.dumps(best, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forgelens",
        description="Manipulated-image classification workbench: residual "
                    "preprocessing, windowed-attention and CNN backbones, "
                    "neighbor search over features.",
        epilog="All randomness derives from --seed: each consumer hashes "
               "'seed:purpose' into an independent stream, so equal flags "
               "give byte-identical artifacts (single-threaded).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n-per-class", type=int, default=20)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("ela", help="write recompression residuals for a tree")
    p.add_argument("--in", dest="src", required=True, help="input image root")
    p.add_argument("--out", required=True, help="output root (mirrored layout)")
    p.add_argument("--quality", type=int, default=90)
    p.add_argument("--subsampling", default="4:2:0", choices=("4:2:0", "4:4:4"))
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: FORGELENS_THREADS or 1)")
    p.set_defaults(func=cmd_ela)

    p = sub.add_parser("train", help="run a training config against a dataset")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--data", required=True, help="dataset root (real/ + fake/)")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--resume", action="store_true",
                   help="continue from checkpoint.fgl in --out")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--epochs", type=int, default=None, help="override config epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--out", default=None,
                   help="directory for eval_<split>.json (default: checkpoint dir)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("knn", help="neighbor grid search over extracted features")
    p.add_argument("--extractor-checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", default="full",
                   help="'full' or 'metrics:weightings:ks' comma lists")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_knn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IntegrityError, TrainingAborted, CodecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
