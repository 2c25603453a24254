"""Reduced convolutional baselines: blocks, shapes, wiring, and sizes."""

import numpy as np
import pytest

from forgelens.autodiff import Tensor, make_rng, ops
from forgelens.exceptions import ConfigError
from forgelens.nn import conv


def batch(n, c, s, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=(n, c, s, s)).astype(np.float32))


def build(variant, seed=0, **kw):
    cfg = conv.ConvConfig(variant=variant, **kw)
    return conv.build_conv(cfg, make_rng(seed, f"init:{variant}"))


# ---------------------------------------------------------------------------
# residual block


def test_residual_block_zero_branch_is_relu():
    """Zeroing conv2 kills the residual branch (batch norm maps a zero
    input to its zero offset), leaving relu(x) on the identity shortcut."""
    block = conv.ResidualBlock(4, 4, 1, make_rng(0, "init"))
    block.conv2.weight.data = np.zeros_like(block.conv2.weight.data)
    x = batch(2, 4, 8, seed=1)
    out = block(x)
    np.testing.assert_allclose(out.data, np.maximum(x.data, 0.0), rtol=0, atol=1e-7)


def test_residual_block_strided_projection():
    block = conv.ResidualBlock(4, 8, 2, make_rng(0, "init"))
    assert block.proj is not None
    out = block(batch(2, 4, 8, seed=2))
    assert out.shape == (2, 8, 4, 4)
    assert (out.data >= 0).all()


def test_residual_block_matches_explicit_composition():
    """The forward pass is exactly the documented layer order; recompose
    it from the block's own children and compare."""
    block = conv.ResidualBlock(3, 6, 2, make_rng(3, "init")).eval()
    x = batch(2, 3, 8, seed=4)
    got = block(x).data
    branch = block.bn2(block.conv2(ops.relu(block.bn1(block.conv1(x)))))
    expected = ops.relu(branch + block.proj_bn(block.proj(x)))
    np.testing.assert_array_equal(got, expected.data)


# ---------------------------------------------------------------------------
# variants


@pytest.mark.parametrize("variant,feat_dim,map_shape", [
    ("resnet_lite", 32, (2, 32, 8, 8)),
    ("alexnet_lite", 64, (2, 32, 2, 2)),
    ("vgg_lite", 64, (2, 32, 4, 4)),
])
def test_variant_shapes(variant, feat_dim, map_shape):
    model = build(variant).eval()
    x = batch(2, 3, 16, seed=5)
    assert model.feature_dim == feat_dim
    assert model.forward_map(x).shape == map_shape
    logits, feats = model(x)
    assert logits.shape == (2, 2)
    assert feats.shape == (2, feat_dim)


@pytest.mark.parametrize("variant", conv.CONV_VARIANTS)
def test_eval_forward_deterministic(variant):
    model = build(variant, seed=1).eval()
    x = batch(2, 3, 16, seed=6)
    a = model(x)
    b = model(x)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)


@pytest.mark.parametrize("variant", conv.CONV_VARIANTS)
def test_features_ignore_head_weights(variant):
    model = build(variant, seed=2).eval()
    x = batch(1, 3, 16, seed=7)
    _, before = model(x)
    model.head.weight.data = model.head.weight.data + 1.0
    logits, after = model(x)
    np.testing.assert_array_equal(before.data, after.data)
    assert logits.shape == (1, 2)


def test_width_multiplier_scales_features():
    model = build("resnet_lite", width=2)
    assert model.feature_dim == 64
    model = build("vgg_lite", width=2)
    assert model.feature_dim == 128


# ---------------------------------------------------------------------------
# parameter budgets, straight from the layer tables


def conv_params(i, o, k, bias):
    return i * o * k * k + (o if bias else 0)


def test_resnet_lite_parameter_count():
    def res_block(i, o, project):
        n = conv_params(i, o, 3, False) + 2 * o
        n += conv_params(o, o, 3, False) + 2 * o
        if project:
            n += conv_params(i, o, 1, False) + 2 * o
        return n

    expected = (conv_params(3, 16, 3, False) + 2 * 16
                + res_block(16, 16, False) + res_block(16, 16, False)
                + res_block(16, 32, True) + res_block(32, 32, False)
                + 32 * 2 + 2)
    model = build("resnet_lite")
    assert sum(p.data.size for p in model.parameters()) == expected == 42962


def test_alexnet_lite_parameter_count():
    expected = (conv_params(3, 16, 5, True) + conv_params(16, 32, 3, True)
                + conv_params(32, 32, 3, True)
                + 32 * 64 + 64 + 64 * 2 + 2)
    model = build("alexnet_lite")
    assert sum(p.data.size for p in model.parameters()) == expected == 17346


def test_vgg_lite_parameter_count():
    expected = (conv_params(3, 16, 3, False) + 2 * 16
                + conv_params(16, 16, 3, False) + 2 * 16
                + conv_params(16, 32, 3, False) + 2 * 32
                + conv_params(32, 32, 3, False) + 2 * 32
                + 32 * 64 + 64 + 64 * 2 + 2)
    model = build("vgg_lite")
    assert sum(p.data.size for p in model.parameters()) == expected == 18994


# ---------------------------------------------------------------------------
# validation


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        conv.ConvConfig(variant="resnet")
    with pytest.raises(ConfigError):
        conv.ConvConfig(width=0)


def test_batch_norm_variants_need_two_samples_in_training():
    for variant in ("resnet_lite", "vgg_lite"):
        model = build(variant).train()
        with pytest.raises(ConfigError):
            model.forward_map(batch(1, 3, 16, seed=8))
