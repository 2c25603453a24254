"""Binary-classification metrics and per-epoch history export.

Positive class is fake (label 1). Accuracy is the fraction of correct
predictions, (TP + TN) / (TP + TN + FP + FN), computed in exact integer
arithmetic before the final division so it agrees with the rational mean
agreement bit for bit.

History exports are plot-ready data, not plots: a CSV of per-epoch rows
and a JSON summary holding the per-split best accuracies.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

from .exceptions import ConfigError, ShapeError

__all__ = [
    "ConfusionCounts", "confusion", "accuracy",
    "MetricsRow", "MetricsHistory", "best_of",
    "export_history", "load_history", "config_hash",
]

POSITIVE_CLASS = 1  # fake
SPLITS = ("train", "test")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be a nonnegative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(predictions, labels) -> ConfusionCounts:
    """Tally TP/TN/FP/FN with fake (1) as the positive class."""
    preds = list(predictions)
    labs = list(labels)
    if len(preds) != len(labs):
        raise ShapeError(
            f"predictions ({len(preds)}) and labels ({len(labs)}) differ in length")
    if not preds:
        raise ShapeError("cannot score an empty prediction set")
    tp = tn = fp = fn = 0
    for p, l in zip(preds, labs):
        p, l = int(p), int(l)
        if p not in (0, 1) or l not in (0, 1):
            raise ConfigError(f"labels must be 0 or 1, got prediction {p}, label {l}")
        if p == 1 and l == 1:
            tp += 1
        elif p == 0 and l == 0:
            tn += 1
        elif p == 1 and l == 0:
            fp += 1
        else:
            fn += 1
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def accuracy(c: ConfusionCounts) -> float:
    """(TP + TN) / total as a single exact integer division."""
    if c.total == 0:
        raise ConfigError("accuracy is undefined for zero scored samples")
    return (c.tp + c.tn) / c.total


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    split: str
    mean_loss: float
    accuracy: float

    def __post_init__(self):
        if self.epoch < 0:
            raise ConfigError(f"epochs are 0-based, got {self.epoch}")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ConfigError(f"accuracy out of [0, 1]: {self.accuracy}")
        if not math.isfinite(self.mean_loss) or self.mean_loss < 0.0:
            raise ConfigError(f"mean loss must be finite and >= 0, got {self.mean_loss}")


@dataclass
class MetricsHistory:
    run_id: str = ""
    config_hash: str = ""
    rows: list[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        last = max((r.epoch for r in self.rows if r.split == row.split), default=None)
        if last is not None and row.epoch <= last:
            raise ConfigError(
                f"epoch {row.epoch} for split {row.split!r} does not advance past {last}")
        self.rows.append(row)

    def for_split(self, split: str) -> list[MetricsRow]:
        return [r for r in self.rows if r.split == split]


def best_of(history: MetricsHistory) -> dict[str, dict[str, float | int]]:
    """Per-split maximum accuracy; ties go to the earliest epoch.

    The maxima for train and test are taken independently and may come
    from different epochs.
    """
    if not history.rows:
        raise ConfigError("history is empty")
    out: dict[str, dict[str, float | int]] = {}
    for split in SPLITS:
        rows = history.for_split(split)
        if not rows:
            raise ConfigError(f"history has no rows for split {split!r}")
        best = rows[0]
        for r in rows[1:]:
            if r.accuracy > best.accuracy:
                best = r
        out[split] = {"epoch": best.epoch, "accuracy": best.accuracy,
                      "mean_loss": best.mean_loss}
    return out


def config_hash(config: dict) -> str:
    """Stable short hash of a JSON-serializable config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def export_history(history: MetricsHistory, csv_path, summary_path) -> None:
    """Write the per-epoch CSV and the JSON summary.

    CSV columns: epoch, split, mean_loss, accuracy. Floats use repr so a
    re-import reproduces the values exactly. The summary records the
    per-split bests, the run id, the config hash, and the positive-class
    convention.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "split", "mean_loss", "accuracy"])
    for r in history.rows:
        writer.writerow([r.epoch, r.split, repr(r.mean_loss), repr(r.accuracy)])
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())

    summary = {
        "run_id": history.run_id,
        "config_hash": history.config_hash,
        "positive_class": "fake",
        "best": best_of(history),
        "epochs_recorded": len({r.epoch for r in history.rows}),
        "note": "per-split maxima are independent and may come from different epochs",
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_history(csv_path, run_id: str = "", cfg_hash: str = "") -> MetricsHistory:
    """Re-import an exported CSV; values round-trip exactly via repr."""
    history = MetricsHistory(run_id=run_id, config_hash=cfg_hash)
    with open(csv_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "split", "mean_loss", "accuracy"]:
            raise ConfigError(f"unexpected CSV header: {header}")
        for rec in reader:
            if len(rec) != 4:
                raise ConfigError(f"malformed CSV row: {rec}")
            history.append(MetricsRow(epoch=int(rec[0]), split=rec[1],
                                      mean_loss=float(rec[2]),
                                      accuracy=float(rec[3])))
    return history
