"""Neural building blocks: layers, transformer and CNN backbones, fusion."""

from .conv import (AlexNetLite, ConvConfig, ResidualBlock, ResNetLite,
                   VggLite, build_conv)
from .fusion import CrossAttentionFuse, FusionConfig, HybridClassifier, concat_fuse
from .layers import (BatchNorm2d, Conv2d, Dropout, Linear, LayerNorm,
                     MaxPool2d, Module, ModuleList, global_avg_pool,
                     trunc_normal)
from .swin import (PatchEmbed, PatchMerging, SwinBlock, SwinClassifier,
                   SwinConfig, WindowAttention, build_shift_mask, cyclic_shift,
                   tiny_config, toy_config, window_partition, window_reverse)

__all__ = [
    "Module", "ModuleList", "Linear", "Conv2d", "LayerNorm", "BatchNorm2d",
    "Dropout", "MaxPool2d", "global_avg_pool", "trunc_normal",
    "SwinConfig", "SwinClassifier", "SwinBlock", "WindowAttention",
    "PatchEmbed", "PatchMerging", "toy_config", "tiny_config",
    "window_partition", "window_reverse", "cyclic_shift", "build_shift_mask",
    "ConvConfig", "ResidualBlock", "ResNetLite", "AlexNetLite", "VggLite",
    "build_conv", "FusionConfig", "CrossAttentionFuse", "HybridClassifier",
    "concat_fuse",
]
