"""Shifted-window transformer: grid plumbing, masking, attention, merging."""

import numpy as np
import pytest

from forgelens.autodiff import Tensor, make_rng
from forgelens.exceptions import ConfigError, ShapeError
from forgelens.nn import swin


def tensor_grid(n, h, w, c, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=(n, h, w, c)).astype(np.float32))


def small_classifier(seed=0):
    cfg = swin.SwinConfig(image_size=16, patch_size=4, embed_dim=8,
                          depths=(1, 1), heads=(2, 2), window_size=2)
    return swin.SwinClassifier(cfg, make_rng(seed, "init:swin_toy")), cfg


# ---------------------------------------------------------------------------
# patch embedding


def test_patch_embed_grid_shape():
    pe = swin.PatchEmbed(8, 4, 16, make_rng(0, "init"))
    out = pe(Tensor(np.zeros((2, 3, 8, 8), dtype=np.float32)))
    assert out.shape == (2, 2, 2, 16)


def test_patch_embed_zero_input_yields_bias():
    pe = swin.PatchEmbed(8, 4, 6, make_rng(0, "init"))
    pe.proj.bias.data = np.arange(6, dtype=np.float32)
    out = pe(Tensor(np.zeros((1, 3, 8, 8), dtype=np.float32)))
    np.testing.assert_array_equal(out.data, np.broadcast_to(np.arange(6, dtype=np.float32),
                                                            (1, 2, 2, 6)))


def test_patch_embed_matches_per_patch_projection():
    """Each patch is flattened (row, col, channel) and sent through the
    shared linear map; verify patch by patch with plain numpy."""
    p, size, dim = 4, 8, 5
    pe = swin.PatchEmbed(size, p, dim, make_rng(1, "init"))
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, size, size)).astype(np.float32)
    out = pe(Tensor(x)).data
    w = pe.proj.weight.data
    b = pe.proj.bias.data
    for n in range(2):
        for gy in range(size // p):
            for gx in range(size // p):
                patch = x[n, :, gy * p:(gy + 1) * p, gx * p:(gx + 1) * p]
                vec = patch.transpose(1, 2, 0).reshape(-1)
                np.testing.assert_allclose(out[n, gy, gx], vec @ w + b,
                                           rtol=1e-5, atol=1e-6)


def test_patch_embed_rejects_wrong_input():
    pe = swin.PatchEmbed(8, 4, 16, make_rng(0, "init"))
    with pytest.raises(ShapeError):
        pe(Tensor(np.zeros((1, 3, 12, 12), dtype=np.float32)))
    with pytest.raises(ConfigError):
        swin.PatchEmbed(10, 4, 16, make_rng(0, "init"))


# ---------------------------------------------------------------------------
# window partition / reverse


@pytest.mark.parametrize("n,h,w,c,window", [
    (1, 4, 4, 1, 2), (2, 8, 8, 5, 4), (3, 8, 4, 2, 2), (1, 8, 8, 3, 2),
])
def test_window_partition_roundtrip(n, h, w, c, window):
    x = tensor_grid(n, h, w, c, seed=h * 10 + w)
    windows = swin.window_partition(x, window)
    assert windows.shape == (n * (h // window) * (w // window), window * window, c)
    back = swin.window_reverse(windows, window, h, w)
    np.testing.assert_array_equal(back.data, x.data)


def test_window_partition_coordinates():
    h = w = 6
    window = 3
    vals = np.arange(h * w, dtype=np.float32).reshape(1, h, w, 1)
    windows = swin.window_partition(Tensor(vals), window).data
    per_row = w // window
    for wi in range(h // window):
        for wj in range(per_row):
            for ti in range(window):
                for tj in range(window):
                    got = windows[wi * per_row + wj, ti * window + tj, 0]
                    assert got == (wi * window + ti) * w + (wj * window + tj)


def test_window_partition_rejects_ragged_grid():
    with pytest.raises(ShapeError):
        swin.window_partition(tensor_grid(1, 6, 6, 1), 4)
    with pytest.raises(ShapeError):
        swin.window_reverse(tensor_grid(1, 4, 4, 1, seed=1), 2, 5, 5)


# ---------------------------------------------------------------------------
# cyclic shift


def test_cyclic_shift_zero_is_identity():
    x = tensor_grid(1, 4, 4, 2)
    assert swin.cyclic_shift(x, 0) is x


def test_cyclic_shift_modular_oracle():
    x = tensor_grid(2, 6, 8, 3, seed=4)
    d = 2
    shifted = swin.cyclic_shift(x, d).data
    for i in range(6):
        for j in range(8):
            np.testing.assert_array_equal(shifted[:, i, j],
                                          x.data[:, (i + d) % 6, (j + d) % 8])


def test_cyclic_shift_inverse():
    from forgelens.autodiff import ops
    x = tensor_grid(1, 8, 8, 2, seed=5)
    shifted = swin.cyclic_shift(x, 3)
    back = ops.roll(shifted, (3, 3), axes=(1, 2))
    np.testing.assert_array_equal(back.data, x.data)


# ---------------------------------------------------------------------------
# shift mask


def test_shift_mask_zero_displacement():
    mask = swin.build_shift_mask(8, 8, 4, 0)
    assert mask.shape == (4, 16, 16)
    assert not mask.any()


def test_shift_mask_fragment_counts():
    """Allowed-pair counts per window follow from fragment sizes: the body
    window is free, edge windows split 2+2 on one axis, the corner splits
    both axes into four 2x2 fragments."""
    mask = swin.build_shift_mask(8, 8, 4, 2)
    assert set(np.unique(mask)) <= {np.float32(0.0), np.float32(swin.MASK_VALUE)}
    allowed = [(m == 0).sum() for m in mask]
    assert allowed == [256, 128, 128, 64]
    for m in mask:
        np.testing.assert_array_equal(m, m.T)


def test_shift_mask_original_coordinate_oracle():
    """A pair may attend iff both tokens came from the same pre-roll band
    on each axis. Bands in original coordinates: the wrapped strip
    [0, d), the tail [h-window+d, h), and the body in between."""
    h = w = 8
    window, d = 4, 2
    mask = swin.build_shift_mask(h, w, window, d)

    def band(o, extent):
        if o < d:
            return 2
        if o >= extent - window + d:
            return 1
        return 0

    per_row = w // window
    for wi in range(h // window):
        for wj in range(per_row):
            m = mask[wi * per_row + wj]
            coords = [(wi * window + ti, wj * window + tj)
                      for ti in range(window) for tj in range(window)]
            for a, (r1, c1) in enumerate(coords):
                o1 = ((r1 + d) % h, (c1 + d) % w)
                for b, (r2, c2) in enumerate(coords):
                    o2 = ((r2 + d) % h, (c2 + d) % w)
                    ok = (band(o1[0], h) == band(o2[0], h)
                          and band(o1[1], w) == band(o2[1], w))
                    assert (m[a, b] == 0) == ok, (wi, wj, a, b)


# ---------------------------------------------------------------------------
# window attention


def test_attention_single_token_window():
    """With one token per window the softmax is trivially 1, so the layer
    reduces to proj(v) whatever the bias table holds."""
    dim, heads = 8, 2
    attn = swin.WindowAttention(dim, heads, 1, make_rng(3, "init"))
    rng = np.random.default_rng(6)
    x = rng.normal(size=(3, 1, dim)).astype(np.float32)
    out = attn(Tensor(x)).data
    qkv = x @ attn.qkv.weight.data + attn.qkv.bias.data
    v = qkv[:, :, 2 * dim:]
    expected = v @ attn.proj.weight.data + attn.proj.bias.data
    np.testing.assert_allclose(out, expected, rtol=1e-5, atol=1e-6)


def reference_window_attention(x, module, mask):
    """Dense float64 reimplementation of masked window attention."""
    b, t, c = x.shape
    heads, hd = module.heads, module.head_dim
    qkv = x.astype(np.float64) @ module.qkv.weight.data.astype(np.float64)
    qkv = qkv + module.qkv.bias.data.astype(np.float64)
    qkv = qkv.reshape(b, t, 3, heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = q @ k.transpose(0, 1, 3, 2) * module.scale
    bias = module.bias_table.data.astype(np.float64)[module.rel_index]  # (t, t, heads)
    scores = scores + bias.transpose(2, 0, 1)[None]
    if mask is not None:
        nw = mask.shape[0]
        scores = scores.reshape(b // nw, nw, heads, t, t) + mask.astype(np.float64)[None, :, None]
        scores = scores.reshape(b, heads, t, t)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = (weights @ v).transpose(0, 2, 1, 3).reshape(b, t, c)
    return out @ module.proj.weight.data.astype(np.float64) + module.proj.bias.data


def test_attention_matches_dense_reference():
    dim, heads, window = 8, 2, 2
    attn = swin.WindowAttention(dim, heads, window, make_rng(4, "init"))
    attn.bias_table.data = np.random.default_rng(7).normal(
        size=attn.bias_table.shape).astype(np.float32)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(8, window * window, dim)).astype(np.float32)
    mask = swin.build_shift_mask(4, 4, window, 1)
    for m in (None, mask):
        got = attn(Tensor(x), m).data
        np.testing.assert_allclose(got, reference_window_attention(x, attn, m),
                                   rtol=1e-4, atol=1e-5)


def test_attention_rejects_token_mismatch():
    attn = swin.WindowAttention(8, 2, 2, make_rng(0, "init"))
    with pytest.raises(ShapeError):
        attn(Tensor(np.zeros((1, 9, 8), dtype=np.float32)))


def test_relative_position_index_properties():
    idx = swin.relative_position_index(3)
    assert idx.shape == (9, 9)
    assert idx.min() >= 0 and idx.max() < 25
    assert (np.diag(idx) == idx[0, 0]).all()  # zero offset everywhere on diagonal
    assert idx[0, 8] != idx[8, 0]  # opposite offsets get distinct entries


# ---------------------------------------------------------------------------
# patch merging


def test_patch_merging_concat_order():
    """Pin TL, TR, BL, BR ordering by routing the merged vector straight
    through an identity-like reduction."""
    merge = swin.PatchMerging(1, make_rng(0, "init"))
    merge.norm = lambda t: t
    w = np.zeros((4, 2), dtype=np.float32)
    w[0, 0] = 1.0  # pick channel 0 of the first concat slot
    w[3, 1] = 1.0  # and of the last
    merge.reduction.weight.data = w
    x = np.zeros((1, 2, 2, 1), dtype=np.float32)
    x[0, 0, 0, 0] = 10.0  # TL
    x[0, 0, 1, 0] = 20.0  # TR
    x[0, 1, 0, 0] = 30.0  # BL
    x[0, 1, 1, 0] = 40.0  # BR
    out = merge(Tensor(x)).data
    np.testing.assert_array_equal(out.reshape(2), [10.0, 40.0])


def test_patch_merging_matches_layerwise_reference():
    from forgelens.autodiff import ops
    dim = 3
    merge = swin.PatchMerging(dim, make_rng(5, "init"))
    x = tensor_grid(2, 4, 4, dim, seed=9)
    out = merge(x).data
    assert out.shape == (2, 2, 2, 2 * dim)

    a = x.data
    merged = np.concatenate([a[:, 0::2, 0::2], a[:, 0::2, 1::2],
                             a[:, 1::2, 0::2], a[:, 1::2, 1::2]], axis=-1)
    mu = merged.mean(axis=-1, keepdims=True)
    var = merged.var(axis=-1, keepdims=True)
    normed = (merged - mu) / np.sqrt(var + merge.norm.eps)
    expected = normed @ merge.reduction.weight.data
    np.testing.assert_allclose(out, expected, rtol=1e-4, atol=1e-5)


def test_patch_merging_rejects_odd_grid():
    merge = swin.PatchMerging(2, make_rng(0, "init"))
    with pytest.raises(ShapeError):
        merge(tensor_grid(1, 3, 4, 2))


# ---------------------------------------------------------------------------
# blocks and the classifier


def test_block_preserves_grid_shape():
    rng = make_rng(0, "init")
    for shift in (0, 2):
        block = swin.SwinBlock(8, 2, grid=8, window=4, shift=shift,
                               mlp_ratio=2.0, rng=rng)
        out = block(tensor_grid(2, 8, 8, 8, seed=shift))
        assert out.shape == (2, 8, 8, 8)


def test_block_rejects_bad_geometry():
    rng = make_rng(0, "init")
    with pytest.raises(ConfigError):
        swin.SwinBlock(8, 2, grid=8, window=4, shift=4, mlp_ratio=2.0, rng=rng)
    block = swin.SwinBlock(8, 2, grid=8, window=4, shift=0, mlp_ratio=2.0, rng=rng)
    with pytest.raises(ShapeError):
        block(tensor_grid(1, 4, 4, 8))


def test_classifier_shapes_and_eval_determinism():
    model, cfg = small_classifier()
    model.eval()
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 16, 16)).astype(np.float32))
    logits, feats = model(x)
    assert logits.shape == (2, 2)
    assert feats.shape == (2, cfg.feature_dim)
    logits2, feats2 = model(x)
    np.testing.assert_array_equal(logits.data, logits2.data)
    np.testing.assert_array_equal(feats.data, feats2.data)


def test_classifier_train_mode_requires_rng():
    model, _ = small_classifier()
    x = Tensor(np.zeros((2, 3, 16, 16), dtype=np.float32))
    with pytest.raises(ConfigError):
        model(x)
    logits, _ = model(x, make_rng(0, "dropout:0"))
    assert logits.shape == (2, 2)


def test_classifier_batch_order_equivariance():
    model, _ = small_classifier(seed=2)
    model.eval()
    rng = np.random.default_rng(3)
    a = rng.normal(size=(1, 3, 16, 16)).astype(np.float32)
    b = rng.normal(size=(1, 3, 16, 16)).astype(np.float32)
    fwd = model(Tensor(np.concatenate([a, b])))[0].data
    rev = model(Tensor(np.concatenate([b, a])))[0].data
    np.testing.assert_allclose(fwd, rev[::-1], rtol=1e-5, atol=1e-6)


def test_features_ignore_head_weights():
    model, _ = small_classifier(seed=4)
    model.eval()
    x = Tensor(np.random.default_rng(5).normal(size=(1, 3, 16, 16)).astype(np.float32))
    before_logits, before_feats = model(x)
    model.head.weight.data = model.head.weight.data + 1.0
    after_logits, after_feats = model(x)
    np.testing.assert_array_equal(before_feats.data, after_feats.data)
    assert not np.array_equal(before_logits.data, after_logits.data)


def expected_param_count(cfg):
    """Recompute the parameter total from the architecture arithmetic."""
    def linear(i, o, bias=True):
        return i * o + (o if bias else 0)

    def block(d, heads):
        hidden = int(d * cfg.mlp_ratio)
        table = (2 * cfg.window_size - 1) ** 2 * heads
        return (2 * d + linear(d, 3 * d) + linear(d, d) + table
                + 2 * d + linear(d, hidden) + linear(hidden, d))

    total = linear(cfg.patch_size ** 2 * 3, cfg.embed_dim)
    for s, (depth, heads) in enumerate(zip(cfg.depths, cfg.heads)):
        d = cfg.stage_dims[s]
        total += depth * block(d, heads)
        if s + 1 < len(cfg.depths):
            total += 2 * (4 * d) + linear(4 * d, 2 * d, bias=False)
    total += 2 * cfg.feature_dim
    total += linear(cfg.feature_dim, cfg.num_classes)
    return total


def test_parameter_count_matches_formula():
    for cfg in (swin.toy_config(), small_classifier()[1]):
        model = swin.SwinClassifier(cfg, make_rng(0, "init"))
        actual = sum(p.data.size for p in model.parameters())
        assert actual == expected_param_count(cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        swin.SwinConfig(image_size=60, patch_size=8)
    with pytest.raises(ConfigError):
        swin.SwinConfig(embed_dim=30, heads=(4, 4))
    with pytest.raises(ConfigError):
        swin.SwinConfig(depths=(2,), heads=(2, 4))
    cfg = swin.tiny_config()
    assert cfg.depths == (2, 2, 6, 2)
    assert cfg.feature_dim == 32 * 8
