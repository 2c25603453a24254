"""Feature fusion of a transformer stream and a CNN stream.

Two modes. ``concat`` joins the pooled feature vectors side by side
(transformer first) ahead of a shared head. ``cross_attention`` lets one
stream's tokens attend to the other's: both streams pass through learned
linear adapters to a shared width, one multi-head attention block mixes
them, and a residual + layer norm wraps the result. By default queries
come from the transformer (global context attends to local CNN detail);
the direction is configurable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..exceptions import ConfigError, ShapeError
from .conv import ConvConfig, build_conv
from .layers import Dropout, Linear, LayerNorm, Module
from .swin import SwinClassifier, SwinConfig

__all__ = ["FusionConfig", "concat_fuse", "CrossAttentionFuse", "HybridClassifier"]

FUSION_MODES = ("concat", "cross_attention")
QUERY_STREAMS = ("swin", "conv")


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "cross_attention"
    shared_dim: int = 64
    heads: int = 4
    dropout: float = 0.1
    query_stream: str = "swin"

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"fusion mode must be one of {FUSION_MODES}, got {self.mode!r}")
        if self.query_stream not in QUERY_STREAMS:
            raise ConfigError(
                f"query stream must be one of {QUERY_STREAMS}, got {self.query_stream!r}")
        if self.mode == "cross_attention" and self.shared_dim % self.heads != 0:
            raise ConfigError(
                f"{self.heads} heads do not divide shared dim {self.shared_dim}")


def concat_fuse(f_a: Tensor, f_b: Tensor) -> Tensor:
    """(N, Da) ++ (N, Db) -> (N, Da+Db); slicing recovers both halves."""
    if f_a.ndim != 2 or f_b.ndim != 2:
        raise ShapeError("concat_fuse expects (N, D) feature matrices")
    if f_a.shape[0] != f_b.shape[0]:
        raise ShapeError(
            f"batch sizes differ: {f_a.shape[0]} vs {f_b.shape[0]}")
    return ops.concat([f_a, f_b], axis=1)


class CrossAttentionFuse(Module):
    """One attention block where queries and keys/values come from
    different token streams. Output is layer_norm(adapted_q + attention)."""

    def __init__(self, q_dim: int, kv_dim: int, cfg: FusionConfig,
                 rng: np.random.Generator):
        super().__init__()
        if cfg.mode != "cross_attention":
            raise ConfigError("CrossAttentionFuse requires mode='cross_attention'")
        d = cfg.shared_dim
        self.heads = cfg.heads
        self.head_dim = d // cfg.heads
        self.scale = self.head_dim ** -0.5
        self.q_adapter = Linear(q_dim, d, rng)
        self.kv_adapter = Linear(kv_dim, d, rng)
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.norm = LayerNorm(d)

    def _split_heads(self, x: Tensor) -> Tensor:
        n, t, d = x.shape
        x = ops.reshape(x, (n, t, self.heads, self.head_dim))
        return ops.transpose(x, (0, 2, 1, 3))

    def forward(self, q_tokens: Tensor, kv_tokens: Tensor) -> Tensor:
        if q_tokens.ndim != 3 or kv_tokens.ndim != 3:
            raise ShapeError("fusion expects (N, T, D) token tensors")
        if q_tokens.shape[0] != kv_tokens.shape[0]:
            raise ShapeError("query and key/value batches differ")
        q_in = self.q_adapter(q_tokens)
        kv_in = self.kv_adapter(kv_tokens)

        q = self._split_heads(self.wq(q_in))
        k = self._split_heads(self.wk(kv_in))
        v = self._split_heads(self.wv(kv_in))
        attn = ops.softmax(
            ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), self.scale),
            axis=-1)
        out = ops.matmul(attn, v)  # (n, heads, Tq, head_dim)
        n, _, tq, _ = out.shape
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)),
                          (n, tq, self.heads * self.head_dim))
        return self.norm(q_in + self.wo(out))


class HybridClassifier(Module):
    """Both backbones run on the same batch; fusion joins their features.

    The transformer contributes its final token grid, the CNN its
    pre-pool spatial map flattened to one token per position. Backbone
    sub-heads exist (the backbones are complete models) but the hybrid
    logits never read them.
    """

    def __init__(self, swin_cfg: SwinConfig, conv_cfg: ConvConfig,
                 fusion_cfg: FusionConfig, rng: np.random.Generator):
        super().__init__()
        self.fusion_cfg = fusion_cfg
        self.swin = SwinClassifier(swin_cfg, rng)
        self.conv = build_conv(conv_cfg, rng)
        if fusion_cfg.mode == "concat":
            self.fuse = None
            fused_dim = swin_cfg.feature_dim + self.conv.feature_dim
        else:
            if fusion_cfg.query_stream == "swin":
                q_dim, kv_dim = swin_cfg.feature_dim, self.conv.feature_dim
            else:
                q_dim, kv_dim = self.conv.feature_dim, swin_cfg.feature_dim
            self.fuse = CrossAttentionFuse(q_dim, kv_dim, fusion_cfg, rng)
            fused_dim = fusion_cfg.shared_dim
        self.head_dropout = Dropout(fusion_cfg.dropout)
        self.head = Linear(fused_dim, swin_cfg.num_classes, rng)

    def _conv_tokens(self, x: Tensor) -> Tensor:
        fmap = self.conv.forward_map(x)
        n, c, h, w = fmap.shape
        return ops.transpose(ops.reshape(fmap, (n, c, h * w)), (0, 2, 1))

    def features(self, x: Tensor) -> Tensor:
        if self.fusion_cfg.mode == "concat":
            return concat_fuse(self.swin.features(x), self.conv.features(x))
        swin_tokens = self.swin.forward_tokens(x)
        conv_tokens = self._conv_tokens(x)
        if self.fusion_cfg.query_stream == "swin":
            fused = self.fuse(swin_tokens, conv_tokens)
        else:
            fused = self.fuse(conv_tokens, swin_tokens)
        return ops.mean_(fused, axis=1)

    def forward(self, x: Tensor, rng: np.random.Generator | None = None):
        feats = self.features(x)
        return self.head(self.head_dropout(feats, rng)), feats
