"""Reduced convolutional baselines, each exposing logits and features.

Layer tables (width multiplier m, default 1):

resnet_lite   stem conv3x3(3->16m)+BN+ReLU;
              residual blocks 16m->16m, 16m->16m, 16m->32m stride 2, 32m->32m;
              global average pool -> features D = 32m;
              dropout + linear -> 2 logits.
alexnet_lite  conv5x5 stride 2 pad 2 (3->16m)+ReLU, maxpool2;
              conv3x3 pad 1 (16m->32m)+ReLU, maxpool2;
              conv3x3 pad 1 (32m->32m)+ReLU;
              global average pool; fc(32m->64m)+ReLU -> features D = 64m;
              dropout + linear -> 2 logits.
vgg_lite      conv3x3(3->16m)+BN+ReLU; conv3x3(16m->16m)+BN+ReLU; maxpool2;
              conv3x3(16m->32m)+BN+ReLU; conv3x3(32m->32m)+BN+ReLU; maxpool2;
              global average pool; fc(32m->64m)+ReLU -> features D = 64m;
              dropout + linear -> 2 logits.

Convolutions followed by batch norm carry no bias. Features never depend
on classifier weights, so every variant doubles as a feature extractor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..exceptions import ConfigError
from .layers import (BatchNorm2d, Conv2d, Dropout, Linear, MaxPool2d, Module,
                     ModuleList, global_avg_pool)

__all__ = ["ConvConfig", "ResidualBlock", "ResNetLite", "AlexNetLite",
           "VggLite", "build_conv", "CONV_VARIANTS"]

CONV_VARIANTS = ("resnet_lite", "alexnet_lite", "vgg_lite")


@dataclass(frozen=True)
class ConvConfig:
    variant: str = "resnet_lite"
    width: int = 1
    dropout: float = 0.1
    num_classes: int = 2

    def __post_init__(self):
        if self.variant not in CONV_VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {CONV_VARIANTS}")
        if self.width < 1:
            raise ConfigError(f"width multiplier must be >= 1, got {self.width}")


class ResidualBlock(Module):
    """conv-BN-ReLU-conv-BN plus a shortcut, ReLU after the sum. The
    shortcut is identity when geometry allows, else a strided 1x1
    conv + BN projection."""

    def __init__(self, in_ch: int, out_ch: int, stride: int,
                 rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, stride=1, padding=1, bias=False)
        self.bn2 = BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(in_ch, out_ch, 1, rng, stride=stride, bias=False)
            self.proj_bn = BatchNorm2d(out_ch)
        else:
            self.proj = None
            self.proj_bn = None

    def forward(self, x: Tensor) -> Tensor:
        branch = self.bn2(self.conv2(ops.relu(self.bn1(self.conv1(x)))))
        shortcut = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return ops.relu(branch + shortcut)


class ResNetLite(Module):
    def __init__(self, cfg: ConvConfig, rng: np.random.Generator):
        super().__init__()
        m = cfg.width
        self.cfg = cfg
        self.feature_dim = 32 * m
        self.stem = Conv2d(3, 16 * m, 3, rng, padding=1, bias=False)
        self.stem_bn = BatchNorm2d(16 * m)
        self.blocks = ModuleList([
            ResidualBlock(16 * m, 16 * m, 1, rng),
            ResidualBlock(16 * m, 16 * m, 1, rng),
            ResidualBlock(16 * m, 32 * m, 2, rng),
            ResidualBlock(32 * m, 32 * m, 1, rng),
        ])
        self.head_dropout = Dropout(cfg.dropout)
        self.head = Linear(self.feature_dim, cfg.num_classes, rng)

    def forward_map(self, x: Tensor) -> Tensor:
        """Pre-pool feature map (N, D, H', W')."""
        x = ops.relu(self.stem_bn(self.stem(x)))
        for block in self.blocks:
            x = block(x)
        return x

    def features(self, x: Tensor) -> Tensor:
        return global_avg_pool(self.forward_map(x))

    def forward(self, x: Tensor, rng: np.random.Generator | None = None):
        feats = self.features(x)
        return self.head(self.head_dropout(feats, rng)), feats


class AlexNetLite(Module):
    def __init__(self, cfg: ConvConfig, rng: np.random.Generator):
        super().__init__()
        m = cfg.width
        self.cfg = cfg
        self.feature_dim = 64 * m
        self.conv1 = Conv2d(3, 16 * m, 5, rng, stride=2, padding=2)
        self.pool1 = MaxPool2d(2)
        self.conv2 = Conv2d(16 * m, 32 * m, 3, rng, padding=1)
        self.pool2 = MaxPool2d(2)
        self.conv3 = Conv2d(32 * m, 32 * m, 3, rng, padding=1)
        self.fc1 = Linear(32 * m, 64 * m, rng)
        self.head_dropout = Dropout(cfg.dropout)
        self.head = Linear(self.feature_dim, cfg.num_classes, rng)

    def forward_map(self, x: Tensor) -> Tensor:
        x = self.pool1(ops.relu(self.conv1(x)))
        x = self.pool2(ops.relu(self.conv2(x)))
        return ops.relu(self.conv3(x))

    def features(self, x: Tensor) -> Tensor:
        pooled = global_avg_pool(self.forward_map(x))
        return ops.relu(self.fc1(pooled))

    def forward(self, x: Tensor, rng: np.random.Generator | None = None):
        feats = self.features(x)
        return self.head(self.head_dropout(feats, rng)), feats


class VggLite(Module):
    def __init__(self, cfg: ConvConfig, rng: np.random.Generator):
        super().__init__()
        m = cfg.width
        self.cfg = cfg
        self.feature_dim = 64 * m
        self.conv1 = Conv2d(3, 16 * m, 3, rng, padding=1, bias=False)
        self.bn1 = BatchNorm2d(16 * m)
        self.conv2 = Conv2d(16 * m, 16 * m, 3, rng, padding=1, bias=False)
        self.bn2 = BatchNorm2d(16 * m)
        self.pool1 = MaxPool2d(2)
        self.conv3 = Conv2d(16 * m, 32 * m, 3, rng, padding=1, bias=False)
        self.bn3 = BatchNorm2d(32 * m)
        self.conv4 = Conv2d(32 * m, 32 * m, 3, rng, padding=1, bias=False)
        self.bn4 = BatchNorm2d(32 * m)
        self.pool2 = MaxPool2d(2)
        self.fc1 = Linear(32 * m, 64 * m, rng)
        self.head_dropout = Dropout(cfg.dropout)
        self.head = Linear(self.feature_dim, cfg.num_classes, rng)

    def forward_map(self, x: Tensor) -> Tensor:
        x = ops.relu(self.bn1(self.conv1(x)))
        x = self.pool1(ops.relu(self.bn2(self.conv2(x))))
        x = ops.relu(self.bn3(self.conv3(x)))
        return self.pool2(ops.relu(self.bn4(self.conv4(x))))

    def features(self, x: Tensor) -> Tensor:
        pooled = global_avg_pool(self.forward_map(x))
        return ops.relu(self.fc1(pooled))

    def forward(self, x: Tensor, rng: np.random.Generator | None = None):
        feats = self.features(x)
        return self.head(self.head_dropout(feats, rng)), feats


def build_conv(cfg: ConvConfig, rng: np.random.Generator) -> Module:
    cls = {"resnet_lite": ResNetLite, "alexnet_lite": AlexNetLite,
           "vgg_lite": VggLite}[cfg.variant]
    return cls(cfg, rng)
