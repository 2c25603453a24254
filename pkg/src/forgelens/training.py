"""Epoch loop, run configuration, and checkpointed training runs.

Determinism contract: a run is a pure function of (config, dataset).
Every random stream is derived from the run seed and a purpose string
("shuffle:3", "dropout:3", "init:swin_toy"), so two single-threaded
runs with the same config produce byte-identical checkpoints and
metrics files, and a resumed run continues exactly where the original
would have gone.

On a non-finite loss the run aborts with the last good state saved;
silently skipping bad batches would corrupt cross-run comparisons.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import GradientTape, make_rng, ops
from .checkpoint import load_arrays, save_arrays
from .data import DatasetManifest, load_batch, scan_dataset, split_records
from .exceptions import ConfigError, TrainingAborted
from .metrics import (MetricsHistory, MetricsRow, accuracy, config_hash,
                      confusion, export_history)
from .nn import (BatchNorm2d, ConvConfig, FusionConfig, HybridClassifier,
                 SwinClassifier, build_conv, tiny_config, toy_config)
from .optim import (OPTIMIZERS, build_optimizer, parse_freeze_policy,
                    trainable_parameter_names)

__all__ = [
    "TrainConfig", "MODELS", "build_model", "has_batch_norm",
    "train_epoch", "evaluate", "run_training", "load_train_config",
    "save_train_config", "CHECKPOINT_NAME",
]

MODELS = ("swin_toy", "swin_tiny", "resnet_lite", "alexnet_lite", "vgg_lite",
          "hybrid_cross", "hybrid_concat")

CHECKPOINT_NAME = "checkpoint.fgl"


@dataclass(frozen=True)
class TrainConfig:
    model: str = "swin_toy"
    optimizer: str = "adamw"
    learning_rate: float = 1e-4
    batch_size: int = 32
    weight_decay: float = 0.01
    epochs: int = 30
    seed: int = 0
    freeze_policy: str = "none"
    dropout: float = 0.1
    image_size: int = 64
    split_ratio: float = 0.8

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(
                f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split ratio must be in (0, 1), got {self.split_ratio}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        parse_freeze_policy(self.freeze_policy)

    def hash(self) -> str:
        return config_hash(asdict(self))


def save_train_config(cfg: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_train_config(path, **overrides) -> TrainConfig:
    """Read a JSON config whose keys mirror TrainConfig field names."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}; expected {sorted(known)}")
    raw.update(overrides)
    return TrainConfig(**raw)


def build_model(cfg: TrainConfig):
    """Construct the named model with its own derived init stream."""
    rng = make_rng(cfg.seed, f"init:{cfg.model}")
    if cfg.model == "swin_toy":
        return SwinClassifier(
            toy_config(image_size=cfg.image_size, dropout=cfg.dropout), rng)
    if cfg.model == "swin_tiny":
        return SwinClassifier(
            tiny_config(image_size=cfg.image_size, dropout=cfg.dropout), rng)
    if cfg.model in ("resnet_lite", "alexnet_lite", "vgg_lite"):
        return build_conv(ConvConfig(variant=cfg.model, dropout=cfg.dropout), rng)
    if cfg.model in ("hybrid_cross", "hybrid_concat"):
        mode = "cross_attention" if cfg.model == "hybrid_cross" else "concat"
        return HybridClassifier(
            toy_config(image_size=cfg.image_size, dropout=cfg.dropout),
            ConvConfig(variant="resnet_lite", dropout=cfg.dropout),
            FusionConfig(mode=mode, dropout=cfg.dropout), rng)
    raise ConfigError(f"unknown model {cfg.model!r}; expected one of {MODELS}")


def has_batch_norm(model) -> bool:
    return any(isinstance(m, BatchNorm2d) for _, m in model.named_modules())


def _batches(n: int, batch_size: int, order: np.ndarray, drop_singleton: bool):
    for start in range(0, n, batch_size):
        chunk = order[start:start + batch_size]
        if drop_singleton and len(chunk) == 1:
            # batch stats are undefined on one sample; a deterministic
            # drop beats a silently different normalization path
            continue
        yield chunk


def train_epoch(model, records, optimizer, cfg: TrainConfig, epoch: int,
                trainable: set[str] | None = None,
                on_abort=None) -> MetricsRow:
    """One pass over the training records; returns the train MetricsRow."""
    records = list(records)
    if not records:
        raise ConfigError("training split is empty")
    bn = has_batch_norm(model)
    if bn and cfg.batch_size < 2:
        raise ConfigError(
            "batch size must be >= 2 to train batch-normalized models")
    model.train()
    order = make_rng(cfg.seed, f"shuffle:{epoch}").permutation(len(records))
    dropout_rng = make_rng(cfg.seed, f"dropout:{epoch}")

    total_loss = 0.0
    preds: list[int] = []
    labs: list[int] = []
    for chunk in _batches(len(records), cfg.batch_size, order, drop_singleton=bn):
        x, labels = load_batch(records, chunk, image_size=cfg.image_size)
        with GradientTape() as tape:
            logits, _ = model.forward(x, rng=dropout_rng)
            loss = ops.cross_entropy(logits, labels)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            if on_abort is not None:
                on_abort()
            raise TrainingAborted(
                f"non-finite loss {loss_val} at epoch {epoch}, "
                f"batch starting with record {int(chunk[0])}")
        tape.gradients(loss)
        optimizer.step(trainable)
        optimizer.zero_grad()
        total_loss += loss_val * len(chunk)
        preds.extend(int(i) for i in np.argmax(logits.data, axis=1))
        labs.extend(int(l) for l in labels)
    if not preds:
        raise ConfigError("no trainable batches; check batch size vs split size")
    return MetricsRow(epoch=epoch, split="train",
                      mean_loss=total_loss / len(preds),
                      accuracy=accuracy(confusion(preds, labs)))


def evaluate(model, records, cfg: TrainConfig, epoch: int,
             split: str = "test") -> MetricsRow:
    """Score a split in eval mode; parameters and buffers stay untouched."""
    records = list(records)
    if not records:
        raise ConfigError(f"{split} split is empty")
    model.eval()
    total_loss = 0.0
    preds: list[int] = []
    labs: list[int] = []
    for start in range(0, len(records), cfg.batch_size):
        idx = np.arange(start, min(start + cfg.batch_size, len(records)))
        x, labels = load_batch(records, idx, image_size=cfg.image_size)
        logits, _ = model.forward(x)
        loss = ops.cross_entropy(logits, labels)
        total_loss += float(loss.data) * len(idx)
        preds.extend(int(i) for i in np.argmax(logits.data, axis=1))
        labs.extend(int(l) for l in labels)
    return MetricsRow(epoch=epoch, split=split,
                      mean_loss=total_loss / len(preds),
                      accuracy=accuracy(confusion(preds, labs)))


def _save_run_checkpoint(path, model, optimizer, cfg: TrainConfig,
                         epoch_next: int, history: MetricsHistory) -> None:
    arrays = dict(model.state_arrays())
    for name, arr in optimizer.state_arrays().items():
        arrays[f"opt.{name}"] = arr
    extra = {
        "epoch_next": epoch_next,
        "history": [asdict(r) for r in history.rows],
        "run_id": history.run_id,
    }
    save_arrays(path, arrays, kind="train_run", model=cfg.model,
                config=asdict(cfg), extra=extra)


def load_run_checkpoint(path, model, optimizer):
    """Restore model + optimizer state; returns (epoch_next, history_rows)."""
    arrays, header = load_arrays(path)
    model_arrays = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    opt_arrays = {k[len("opt."):]: v for k, v in arrays.items() if k.startswith("opt.")}
    model.load_state_arrays(model_arrays)
    if optimizer is not None:
        optimizer.load_state_arrays(opt_arrays)
    extra = header.get("extra", {})
    rows = [MetricsRow(**r) for r in extra.get("history", [])]
    return int(extra.get("epoch_next", 0)), rows, header


def run_training(cfg: TrainConfig, data_root, out_dir, resume: bool = False,
                 log=None) -> MetricsHistory:
    """Full training run: split, epochs, per-epoch checkpoint + metrics.

    ``out_dir`` receives manifest.jsonl, checkpoint.fgl, metrics.csv,
    metrics.json, and config.json. With ``resume=True`` an existing
    checkpoint in ``out_dir`` continues its epoch numbering; the result
    is bitwise identical to a never-interrupted run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = split_records(scan_dataset(data_root), cfg.split_ratio, cfg.seed)
    manifest.save(out / "manifest.jsonl")
    save_train_config(cfg, out / "config.json")

    model = build_model(cfg)
    optimizer = build_optimizer(cfg.optimizer, model.named_parameters(),
                                cfg.learning_rate, cfg.weight_decay)
    policy = parse_freeze_policy(cfg.freeze_policy)
    history = MetricsHistory(run_id=f"{cfg.model}-seed{cfg.seed}-{cfg.hash()}",
                             config_hash=cfg.hash())

    ckpt_path = out / CHECKPOINT_NAME
    start_epoch = 0
    if resume:
        if not ckpt_path.exists():
            raise ConfigError(f"cannot resume: {ckpt_path} does not exist")
        start_epoch, rows, header = load_run_checkpoint(ckpt_path, model, optimizer)
        # epochs may grow on resume (continue training); everything else
        # must match or the replayed streams would diverge silently
        saved = dict(header.get("config", {}), epochs=cfg.epochs)
        if saved != asdict(cfg):
            raise ConfigError("cannot resume: checkpoint config differs from this run")
        for row in rows:
            history.append(row)

    train_records = manifest.for_split("train")
    test_records = manifest.for_split("test")

    for epoch in range(start_epoch, cfg.epochs):
        trainable = trainable_parameter_names(model, policy, epoch)

        def checkpoint_last_good(ep=epoch):
            _save_run_checkpoint(ckpt_path, model, optimizer, cfg, ep, history)

        train_row = train_epoch(model, train_records, optimizer, cfg, epoch,
                                trainable, on_abort=checkpoint_last_good)
        test_row = evaluate(model, test_records, cfg, epoch)
        history.append(train_row)
        history.append(test_row)
        _save_run_checkpoint(ckpt_path, model, optimizer, cfg, epoch + 1, history)
        export_history(history, out / "metrics.csv", out / "metrics.json")
        if log is not None:
            log(f"epoch {epoch}: train acc {train_row.accuracy:.4f} "
                f"loss {train_row.mean_loss:.4f} | test acc {test_row.accuracy:.4f} "
                f"loss {test_row.mean_loss:.4f}")
    return history
