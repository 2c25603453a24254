"""Error-level analysis: residuals between an image and its recompression.

Recompressing an image at a known JPEG quality perturbs every 8x8 block
by an amount that depends on how often that block was quantized before.
Regions pasted in from a source with a different compression history
therefore stand out in the absolute difference

    residual = |x - recompress(x, q)|

computed per sample. The recompression uses the pinned codec in
:mod:`forgelens.jpeg`, so residuals are reproducible bit-for-bit across
machines. Residuals feed models raw; the amplification factor exists
only to make exported previews visible to humans.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import jpeg
from .exceptions import ConfigError, ShapeError

__all__ = [
    "ElaConfig", "check_image_buffer", "jpeg_roundtrip", "ela_transform",
    "amplify_for_display", "read_rgb", "write_png", "batch_preprocess",
    "resolve_threads", "IMAGE_SUFFIXES",
]

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

THREADS_ENV_VAR = "FORGELENS_THREADS"


@dataclass(frozen=True)
class ElaConfig:
    """Recompression settings for residual extraction."""

    quality: int = 90
    amplification: float = 1.0
    subsampling: str = "4:2:0"

    def __post_init__(self):
        if not 1 <= int(self.quality) <= 100:
            raise ConfigError(f"quality must be in [1, 100], got {self.quality}")
        if self.amplification < 1.0:
            raise ConfigError(f"amplification must be >= 1, got {self.amplification}")
        if self.subsampling not in jpeg.SUBSAMPLINGS:
            raise ConfigError(
                f"subsampling must be one of {jpeg.SUBSAMPLINGS}, got {self.subsampling!r}")


def check_image_buffer(img) -> np.ndarray:
    """Validate an 8-bit RGB image array and return it as uint8 (H, W, 3)."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) RGB image, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeError("image dimensions must be positive")
    if arr.dtype != np.uint8:
        raise ShapeError(f"expected uint8 samples, got {arr.dtype}")
    return arr


def jpeg_roundtrip(img, quality: int, subsampling: str = "4:2:0") -> np.ndarray:
    """The image as it survives one encode/decode at the given quality."""
    arr = check_image_buffer(img)
    return jpeg.roundtrip(arr, quality=quality, subsampling=subsampling)


def ela_transform(img, cfg: ElaConfig = ElaConfig()) -> np.ndarray:
    """Per-sample absolute recompression residual, uint8, same shape."""
    arr = check_image_buffer(img)
    recompressed = jpeg.roundtrip(arr, quality=cfg.quality, subsampling=cfg.subsampling)
    diff = np.abs(arr.astype(np.int16) - recompressed.astype(np.int16))
    return diff.astype(np.uint8)


def amplify_for_display(residual: np.ndarray, amplification: float) -> np.ndarray:
    """Scale a residual for human viewing. Never feed the result to models."""
    if amplification < 1.0:
        raise ConfigError(f"amplification must be >= 1, got {amplification}")
    out = residual.astype(np.float64) * amplification
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def read_rgb(path) -> np.ndarray:
    """Load any PIL-readable image file as uint8 RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_png(path, arr: np.ndarray) -> None:
    """Store an array losslessly. Residuals must never re-enter a lossy codec."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def resolve_threads(explicit: int | None = None) -> int:
    """Worker-count policy: explicit flag, else FORGELENS_THREADS, else 1."""
    if explicit is not None:
        n = int(explicit)
    else:
        env = os.environ.get(THREADS_ENV_VAR)
        n = int(env) if env else 1
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    return n


def _process_one(src: Path, dst: Path, cfg: ElaConfig) -> str | None:
    try:
        residual = ela_transform(read_rgb(src), cfg)
    except Exception:
        return None
    write_png(dst, residual)
    return "ok"


def batch_preprocess(src_root, dst_root, cfg: ElaConfig = ElaConfig(),
                     threads: int | None = None) -> dict:
    """Mirror a directory tree with residual PNGs.

    Unreadable files are recorded in the report and skipped; an input
    tree with no image files at all is an error. Files are processed in
    sorted path order and may be handled by a worker pool; the report and
    the outputs are identical either way because each file is
    independent.
    """
    src_root = Path(src_root)
    dst_root = Path(dst_root)
    if not src_root.is_dir():
        raise ConfigError(f"source root {src_root} is not a directory")
    files = sorted(p for p in src_root.rglob("*")
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ConfigError(f"no image files found under {src_root}")

    rels = [p.relative_to(src_root) for p in files]
    dsts = [dst_root / rel.with_suffix(".png") for rel in rels]
    workers = resolve_threads(threads)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_process_one, files, dsts, [cfg] * len(files)))

    failed = [rel.as_posix() for rel, res in zip(rels, results) if res is None]
    report = {
        "processed": sum(1 for res in results if res is not None),
        "failed": failed,
        "quality": cfg.quality,
        "subsampling": cfg.subsampling,
    }
    dst_root.mkdir(parents=True, exist_ok=True)
    report_path = dst_root / "ela_report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
