"""Shifted-window transformer classifier at desk scale.

Attention runs inside non-overlapping windows of the token grid. Odd
blocks first roll the grid by half a window (toroidally), so windows
straddle the previous block's window boundaries; an additive mask then
hides token pairs whose pre-roll positions were not neighbors, making
the rolled computation equivalent to masked attention on the original
grid. Stages are separated by patch merging, which halves the grid and
doubles the channel width.

Weights train from scratch; there is no pretrained-weight import.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..exceptions import ConfigError, ShapeError
from .layers import Dropout, Linear, LayerNorm, Module, ModuleList, trunc_normal

__all__ = [
    "SwinConfig", "toy_config", "tiny_config", "window_partition",
    "window_reverse", "cyclic_shift", "build_shift_mask",
    "relative_position_index", "WindowAttention", "SwinBlock",
    "PatchEmbed", "PatchMerging", "SwinClassifier",
]

MASK_VALUE = -1e9  # additive stand-in for -inf; survives float32 softmax


@dataclass(frozen=True)
class SwinConfig:
    image_size: int = 64
    patch_size: int = 4
    embed_dim: int = 32
    depths: tuple = (2, 2)
    heads: tuple = (2, 4)
    window_size: int = 4
    mlp_ratio: float = 2.0
    dropout: float = 0.1
    num_classes: int = 2

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}")
        if len(self.depths) != len(self.heads) or not self.depths:
            raise ConfigError("depths and heads must be equal-length, non-empty")
        grid = self.image_size // self.patch_size
        for s, h in enumerate(self.heads):
            dim = self.embed_dim * (2 ** s)
            if dim % h != 0:
                raise ConfigError(f"stage {s}: {h} heads do not divide dim {dim}")
            if grid % self.window_size != 0:
                raise ConfigError(
                    f"stage {s}: grid {grid} not divisible by window {self.window_size}")
            if s + 1 < len(self.depths):
                if grid % 2 != 0:
                    raise ConfigError(f"stage {s}: grid {grid} cannot be merged 2x2")
                grid //= 2

    @property
    def stage_dims(self) -> tuple:
        return tuple(self.embed_dim * (2 ** s) for s in range(len(self.depths)))

    @property
    def feature_dim(self) -> int:
        return self.stage_dims[-1]


def toy_config(**overrides) -> SwinConfig:
    """Default desk-scale geometry, small enough for CPU gradient checks."""
    return SwinConfig(**overrides)


def tiny_config(**overrides) -> SwinConfig:
    """Four-stage 2-2-6-2 variant (the classic depth pattern, scaled down)."""
    base = dict(image_size=128, patch_size=4, embed_dim=32,
                depths=(2, 2, 6, 2), heads=(2, 4, 8, 16), window_size=4)
    base.update(overrides)
    return SwinConfig(**base)


# ---------------------------------------------------------------------------
# grid plumbing


def window_partition(x: Tensor, window: int) -> Tensor:
    """(N, H, W, C) -> (N*nWindows, window*window, C), row-major windows."""
    n, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"grid {h}x{w} not divisible by window {window}")
    x = ops.reshape(x, (n, h // window, window, w // window, window, c))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (n * (h // window) * (w // window), window * window, c))


def window_reverse(windows: Tensor, window: int, h: int, w: int) -> Tensor:
    """Exact inverse of :func:`window_partition`."""
    nw = (h // window) * (w // window)
    if windows.shape[0] % nw or windows.shape[1] != window * window:
        raise ShapeError(
            f"window batch {windows.shape} does not tile a {h}x{w} grid")
    n = windows.shape[0] // nw
    c = windows.shape[2]
    x = ops.reshape(windows, (n, h // window, w // window, window, window, c))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (n, h, w, c))


def cyclic_shift(x: Tensor, displacement: int) -> Tensor:
    """Toroidal roll of an (N, H, W, C) grid by (-d, -d)."""
    if displacement == 0:
        return x
    return ops.roll(x, (-displacement, -displacement), axes=(1, 2))


def build_shift_mask(h: int, w: int, window: int, displacement: int) -> np.ndarray:
    """Per-window pairwise additive mask for a rolled grid.

    After rolling by (-d, -d), tokens from opposite grid edges share
    windows. Tokens are banded by pre-roll region (three bands per axis:
    body, the d-wide wrapped strip, and the window remainder before it);
    pairs with different band ids get MASK_VALUE. Returns
    (num_windows, window^2, window^2) float32, zeros where attention is
    allowed.
    """
    if displacement == 0:
        return np.zeros(((h // window) * (w // window), window ** 2, window ** 2),
                        dtype=np.float32)
    ids = np.zeros((h, w), dtype=np.int64)
    bands = (slice(0, -window), slice(-window, -displacement), slice(-displacement, None))
    n = 0
    for hs in bands:
        for ws in bands:
            ids[hs, ws] = n
            n += 1
    ids = ids.reshape(h // window, window, w // window, window)
    ids = ids.transpose(0, 2, 1, 3).reshape(-1, window * window)
    diff = ids[:, :, None] - ids[:, None, :]
    return np.where(diff != 0, np.float32(MASK_VALUE), np.float32(0.0))


def relative_position_index(window: int) -> np.ndarray:
    """(window^2, window^2) lookup into the (2w-1)^2 bias table, a pure
    function of in-window coordinate offsets."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window),
                                  indexing="ij"), axis=0).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]  # (2, T, T), values in [-(w-1), w-1]
    return (rel[0] + window - 1) * (2 * window - 1) + (rel[1] + window - 1)


# ---------------------------------------------------------------------------
# modules


class WindowAttention(Module):
    """Multi-head attention over window token sets with a learned
    relative-position bias shared across windows."""

    def __init__(self, dim: int, heads: int, window: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ConfigError(f"{heads} heads do not divide dim {dim}")
        self.dim = dim
        self.heads = heads
        self.window = window
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.bias_table = Tensor(
            trunc_normal(((2 * window - 1) ** 2, heads), rng), requires_grad=True)
        self.rel_index = relative_position_index(window)

    def forward(self, windows: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, t, c = windows.shape
        if t != self.window ** 2:
            raise ShapeError(
                f"{t} tokens per window, bias table built for {self.window ** 2}")
        qkv = self.qkv(windows)
        qkv = ops.reshape(qkv, (b, t, 3, self.heads, self.head_dim))
        qkv = ops.transpose(qkv, (2, 0, 3, 1, 4))  # (3, b, heads, t, head_dim)
        q = ops.strided_slice(qkv, 0)
        k = ops.strided_slice(qkv, 1)
        v = ops.strided_slice(qkv, 2)

        attn = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), self.scale)
        bias = ops.gather(self.bias_table, self.rel_index.reshape(-1))
        bias = ops.transpose(ops.reshape(bias, (t, t, self.heads)), (2, 0, 1))
        attn = attn + ops.reshape(bias, (1, self.heads, t, t))
        if mask is not None:
            nw = mask.shape[0]
            attn = ops.reshape(attn, (b // nw, nw, self.heads, t, t))
            attn = attn + Tensor(mask.reshape(1, nw, 1, t, t))
            attn = ops.reshape(attn, (b, self.heads, t, t))
        attn = ops.softmax(attn, axis=-1)

        out = ops.matmul(attn, v)  # (b, heads, t, head_dim)
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, t, c))
        return self.proj(out)


class SwinBlock(Module):
    """Pre-norm attention + MLP block on an (N, H, W, C) token grid."""

    def __init__(self, dim: int, heads: int, grid: int, window: int,
                 shift: int, mlp_ratio: float, rng: np.random.Generator):
        super().__init__()
        if not 0 <= shift < window:
            raise ConfigError(f"shift {shift} must lie in [0, window {window})")
        self.grid = grid
        self.window = window
        self.shift = shift
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window, rng)
        self.norm2 = LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        # Derivable from geometry, so kept out of the checkpoint state.
        self.mask = (build_shift_mask(grid, grid, window, shift) if shift else None)

    def forward(self, x: Tensor) -> Tensor:
        n, h, w, c = x.shape
        if h != self.grid or w != self.grid:
            raise ShapeError(f"expected {self.grid}x{self.grid} grid, got {h}x{w}")
        shortcut = x
        x = self.norm1(x)
        x = cyclic_shift(x, self.shift)
        windows = window_partition(x, self.window)
        windows = self.attn(windows, self.mask)
        x = window_reverse(windows, self.window, h, w)
        if self.shift:
            x = ops.roll(x, (self.shift, self.shift), axes=(1, 2))
        x = shortcut + x
        return x + self.fc2(ops.gelu(self.fc1(self.norm2(x))))


class PatchEmbed(Module):
    """Non-overlapping patches, flattened (row, col, channel) and linearly
    projected. Equivalent to a conv with kernel = stride = patch size."""

    def __init__(self, image_size: int, patch_size: int, dim: int,
                 rng: np.random.Generator):
        super().__init__()
        if image_size % patch_size != 0:
            raise ConfigError(
                f"image size {image_size} not divisible by patch size {patch_size}")
        self.image_size = image_size
        self.patch_size = patch_size
        self.proj = Linear(patch_size * patch_size * 3, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        n, c, s1, s2 = x.shape
        if c != 3 or s1 != self.image_size or s2 != self.image_size:
            raise ShapeError(
                f"expected (N, 3, {self.image_size}, {self.image_size}), got {x.shape}")
        p = self.patch_size
        g = self.image_size // p
        x = ops.reshape(x, (n, 3, g, p, g, p))
        x = ops.transpose(x, (0, 2, 4, 3, 5, 1))  # (n, gh, gw, p, p, 3)
        x = ops.reshape(x, (n, g, g, p * p * 3))
        return self.proj(x)


class PatchMerging(Module):
    """Concatenate 2x2 neighborhoods (TL, TR, BL, BR), normalize, project
    4C -> 2C."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"grid {h}x{w} must be even to merge 2x2")
        tl = ops.strided_slice(x, (slice(None), slice(0, None, 2), slice(0, None, 2)))
        tr = ops.strided_slice(x, (slice(None), slice(0, None, 2), slice(1, None, 2)))
        bl = ops.strided_slice(x, (slice(None), slice(1, None, 2), slice(0, None, 2)))
        br = ops.strided_slice(x, (slice(None), slice(1, None, 2), slice(1, None, 2)))
        merged = ops.concat([tl, tr, bl, br], axis=-1)
        return self.reduction(self.norm(merged))


class _Stage(Module):
    def __init__(self, dim: int, heads: int, depth: int, grid: int, window: int,
                 mlp_ratio: float, merge: bool, rng: np.random.Generator):
        super().__init__()
        self.blocks = ModuleList([
            SwinBlock(dim, heads, grid, window,
                      shift=0 if i % 2 == 0 else window // 2,
                      mlp_ratio=mlp_ratio, rng=rng)
            for i in range(depth)
        ])
        self.merge = PatchMerging(dim, rng) if merge else None

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        if self.merge is not None:
            x = self.merge(x)
        return x


class SwinClassifier(Module):
    """Backbone plus binary head.

    Features are the layer-normalized global average of the final token
    grid; the head is dropout + linear, so features never depend on head
    weights and can feed an external classifier directly.
    """

    def __init__(self, cfg: SwinConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg.image_size, cfg.patch_size,
                                      cfg.embed_dim, rng)
        grid = cfg.image_size // cfg.patch_size
        stages = []
        for s, (depth, heads) in enumerate(zip(cfg.depths, cfg.heads)):
            merge = s + 1 < len(cfg.depths)
            stages.append(_Stage(cfg.stage_dims[s], heads, depth, grid,
                                 cfg.window_size, cfg.mlp_ratio, merge, rng))
            if merge:
                grid //= 2
        self.stages = ModuleList(stages)
        self.norm = LayerNorm(cfg.feature_dim)
        self.head_dropout = Dropout(cfg.dropout)
        self.head = Linear(cfg.feature_dim, cfg.num_classes, rng)

    def forward_tokens(self, x: Tensor) -> Tensor:
        """Final-stage token grid flattened to (N, tokens, feature_dim)."""
        x = self.patch_embed(x)
        for stage in self.stages:
            x = stage(x)
        n, h, w, c = x.shape
        return ops.reshape(x, (n, h * w, c))

    def features(self, x: Tensor) -> Tensor:
        tokens = self.forward_tokens(x)
        return self.norm(ops.mean_(tokens, axis=1))

    def forward(self, x: Tensor, rng: np.random.Generator | None = None):
        feats = self.features(x)
        logits = self.head(self.head_dropout(feats, rng))
        return logits, feats
