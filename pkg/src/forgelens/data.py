"""Dataset discovery, deterministic splits, batching, and synthetic fixtures.

Layout convention: ``<root>/real/*.{png,jpg,jpeg}`` and ``<root>/fake/...``
with labels real=0, fake=1 fixed project-wide. The fixture generator
produces small corpora with a genuine recompression signature: "real"
images carry one uniform JPEG history, "fake" images contain a pasted
rectangle whose history differs, which is exactly what the residual
transform detects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import jpeg
from .autodiff import Tensor, make_rng
from .ela import IMAGE_SUFFIXES, read_rgb, write_png
from .exceptions import CodecError, ConfigError, ShapeError

__all__ = [
    "ImageRecord", "DatasetManifest", "scan_dataset", "split_records",
    "bilinear_resize", "load_batch", "make_fixture_dataset",
    "REAL_LABEL", "FAKE_LABEL",
]

REAL_LABEL = 0
FAKE_LABEL = 1

_CLASS_DIRS = (("real", REAL_LABEL), ("fake", FAKE_LABEL))


@dataclass(frozen=True)
class ImageRecord:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    """An immutable record list plus the knobs that produced the split."""

    records: list[ImageRecord]
    seed: int | None = None
    split_ratio: float | None = None

    def for_split(self, split: str) -> list[ImageRecord]:
        if split not in ("train", "test"):
            raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
        return [r for r in self.records if r.split == split]

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps({"path": r.path, "label": r.label, "split": r.split})
                 for r in self.records]
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, seed: int | None = None,
             split_ratio: float | None = None) -> "DatasetManifest":
        records = []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(ImageRecord(obj["path"], int(obj["label"]), obj["split"]))
        return cls(records, seed=seed, split_ratio=split_ratio)


def scan_dataset(root) -> list[tuple[str, int]]:
    """List (path, label) pairs, real class first, each class path-sorted."""
    root = Path(root)
    out: list[tuple[str, int]] = []
    for dirname, label in _CLASS_DIRS:
        class_dir = root / dirname
        if not class_dir.is_dir():
            raise ConfigError(f"dataset root {root} is missing a {dirname}/ directory")
        files = sorted(p for p in class_dir.rglob("*")
                       if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        out.extend((p.as_posix(), label) for p in files)
    if not out:
        raise ConfigError(f"no image files found under {root}")
    return out


def split_records(pairs, ratio: float, seed: int) -> DatasetManifest:
    """Stratified train/test split by a seeded shuffle within each class."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    pairs = list(pairs)
    rng = make_rng(seed, "split")
    records: list[ImageRecord] = []
    for _, label in _CLASS_DIRS:
        members = [p for p in pairs if p[1] == label]
        if not members:
            raise ConfigError(f"class {label} has no records; cannot stratify")
        perm = rng.permutation(len(members))
        n_train = int(np.floor(ratio * len(members) + 0.5))
        train_idx = set(perm[:n_train].tolist())
        for i, (path, lab) in enumerate(members):
            records.append(ImageRecord(path, lab, "train" if i in train_idx else "test"))
    return DatasetManifest(records, seed=seed, split_ratio=ratio)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Classic bilinear sampling: half-pixel centers, clamped edges, no
    antialiasing. Kept deliberately simple so an index-by-index reference
    implementation reproduces it."""
    if img.ndim != 3:
        raise ShapeError(f"expected (H, W, C) image, got shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ConfigError("output dimensions must be positive")
    h, w = img.shape[:2]
    src = img.astype(np.float64)

    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]

    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    if img.dtype == np.uint8:
        return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return out.astype(img.dtype)


def load_batch(records, indices, image_size: int = 64,
               mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5),
               dtype=np.float32) -> tuple[Tensor, np.ndarray]:
    """Decode, resize, and normalize a batch into an (N, 3, S, S) tensor."""
    records = list(records)
    batch = np.empty((len(indices), 3, image_size, image_size), dtype=dtype)
    labels = np.empty(len(indices), dtype=np.int64)
    mean = np.asarray(mean, dtype=np.float64).reshape(3, 1, 1)
    std = np.asarray(std, dtype=np.float64).reshape(3, 1, 1)
    for row, idx in enumerate(indices):
        rec = records[int(idx)]
        try:
            img = read_rgb(rec.path)
        except Exception as exc:
            raise CodecError(f"cannot decode image {rec.path}: {exc}") from exc
        img = bilinear_resize(img, image_size, image_size)
        chw = img.astype(np.float64).transpose(2, 0, 1) / 255.0
        batch[row] = ((chw - mean) / std).astype(dtype)
        labels[row] = rec.label
    return Tensor(batch), labels


def _corner_gradient(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth field from random corner colors, plus mild texture."""
    corners = rng.uniform(0, 255, size=(2, 2, 3))
    field = bilinear_resize(corners, size, size)
    noise = rng.normal(0.0, 6.0, size=(size, size, 3))
    return np.clip(field + noise, 0, 255).astype(np.uint8)


def make_fixture_dataset(out_root, n_per_class: int, seed: int,
                         image_size: int = 64, base_quality: int = 90,
                         splice_quality_range: tuple[int, int] = (55, 85)) -> Path:
    """Generate a labeled corpus with a real recompression signature.

    Every image first takes one full encode/decode at ``base_quality`` so
    its compression history is uniform. Fakes then get one rectangle
    replaced by the same pixels recompressed at a different quality. The
    per-fake rectangle and quality go to fixture_meta.json so tests can
    measure the in-splice residual independently. Per-image RNG streams
    are derived from (seed, role, index), making the corpus byte-stable
    regardless of generation order.
    """
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    if image_size < 32:
        raise ConfigError("fixture images must be at least 32x32")
    lo, hi = splice_quality_range
    if not (1 <= lo <= hi <= 100):
        raise ConfigError(f"invalid splice quality range {splice_quality_range}")

    out_root = Path(out_root)
    meta: dict = {
        "seed": seed,
        "n_per_class": n_per_class,
        "image_size": image_size,
        "base_quality": base_quality,
        "splice_quality_range": [lo, hi],
        "fakes": {},
    }

    for i in range(n_per_class):
        rng = make_rng(seed, f"fixture:real:{i}")
        img = _corner_gradient(rng, image_size)
        img = jpeg.roundtrip(img, quality=base_quality)
        write_png(out_root / "real" / f"real_{i:04d}.png", img)

    for i in range(n_per_class):
        rng = make_rng(seed, f"fixture:fake:{i}")
        img = _corner_gradient(rng, image_size)
        img = jpeg.roundtrip(img, quality=base_quality)

        min_side = image_size // 4
        max_side = image_size // 2
        rh = int(rng.integers(min_side, max_side + 1))
        rw = int(rng.integers(min_side, max_side + 1))
        top = int(rng.integers(0, image_size - rh + 1))
        left = int(rng.integers(0, image_size - rw + 1))
        quality = int(rng.integers(lo, hi + 1))

        region = img[top:top + rh, left:left + rw]
        img = img.copy()
        img[top:top + rh, left:left + rw] = jpeg.roundtrip(region, quality=quality)
        name = f"fake_{i:04d}.png"
        write_png(out_root / "fake" / name, img)
        meta["fakes"][name] = {"top": top, "left": left, "height": rh,
                               "width": rw, "quality": quality}

    (out_root / "fixture_meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out_root
