"""Building blocks: normalization, rotary embedding, the three attention
flavors, the gated feedforward, full blocks, mapping network, and the token
rearrangement layers."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hdit.blocks as B
import hdit.tensor as T
from hdit.rng import INIT, NOISE, RngStream
from hdit.tensor import Tensor

from conftest import randn


# ----------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------
def test_rms_norm_formula():
    x = randn(1, (2, 5, 8))
    g = randn(2, (8,))
    got = B.rms_norm(Tensor(x), Tensor(g)).data
    want = x / np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True) + 1e-6) * g
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_rms_norm_scale_invariance_in_magnitude():
    x = randn(3, (4, 8))
    g = np.ones(8)
    a = B.rms_norm(Tensor(x), Tensor(g)).data
    b = B.rms_norm(Tensor(1000.0 * x), Tensor(g)).data
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_ada_rms_norm_is_plain_norm_at_construction():
    norm = B.AdaRMSNorm(8, 6, dtype=np.float64)
    x = Tensor(randn(4, (2, 5, 8)))
    cond = Tensor(randn(5, (2, 6)))
    got = norm(x, cond).data
    want = B.rms_norm(x, Tensor(np.ones(8))).data
    np.testing.assert_array_equal(got, want)


def test_ada_rms_norm_conditioning_scales_output():
    norm = B.AdaRMSNorm(4, 3, dtype=np.float64)
    # force the conditioning projection to emit +1 -> scale 2
    norm.cond_to_scale.weight.data[:] = 0.0
    norm.cond_to_scale.bias.data[:] = 1.0
    x = Tensor(randn(6, (1, 2, 4)))
    cond = Tensor(randn(7, (1, 3)))
    doubled = norm(x, cond).data
    base = B.rms_norm(x, Tensor(np.ones(4))).data
    np.testing.assert_allclose(doubled, 2.0 * base, rtol=1e-12)


# ----------------------------------------------------------------------
# rotary embedding
# ----------------------------------------------------------------------
def test_rope_channel_split():
    f = B.RoPEFrequencies(16)
    # quarter of the head dim in pairs, split between the two axes
    assert f.pairs_row + f.pairs_col == 16 // 4
    assert f.pairs_row == (16 // 4 + 1) // 2


def test_rope_identity_at_origin():
    f = B.RoPEFrequencies(8)
    x = randn(8, (2, 1, 8))
    pos = np.zeros((1, 2), dtype=np.int64)
    np.testing.assert_allclose(B.apply_axial_rope(Tensor(x), f, pos).data, x,
                               rtol=1e-15)


def test_rope_preserves_norm_and_passthrough():
    f = B.RoPEFrequencies(8)  # 2 pairs rotated, upper half untouched
    x = randn(9, (3, 12, 8))
    pos = B.grid_positions(3, 4)
    y = B.apply_axial_rope(Tensor(x), f, pos).data
    np.testing.assert_allclose(np.linalg.norm(y, axis=-1),
                               np.linalg.norm(x, axis=-1), rtol=1e-12)
    np.testing.assert_array_equal(y[..., 4:], x[..., 4:])


def test_rope_relative_phase():
    """Rotating q and k at positions p and p+delta leaves their pairwise
    products dependent only on delta."""
    f = B.RoPEFrequencies(8)
    q = randn(10, (1, 1, 8))
    k = randn(11, (1, 1, 8))
    def dot_at(p1, p2):
        pq = np.array([p1], dtype=np.int64)
        pk = np.array([p2], dtype=np.int64)
        qr = B.apply_axial_rope(Tensor(q), f, pq).data
        kr = B.apply_axial_rope(Tensor(k), f, pk).data
        return float(np.sum(qr * kr))
    d1 = dot_at((2, 3), (5, 1))
    d2 = dot_at((12, 103), (15, 101))  # same offset (3, -2)
    assert abs(d1 - d2) < 1e-9


def test_grid_positions_layout():
    pos = B.grid_positions(2, 3)
    np.testing.assert_array_equal(
        pos, [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]])


# ----------------------------------------------------------------------
# attention
# ----------------------------------------------------------------------
def test_cosine_attention_logit_bound_and_uniform_limit():
    q = Tensor(randn(12, (1, 1, 6, 8)) * 100)
    k = Tensor(randn(13, (1, 1, 6, 8)) * 100)
    v = Tensor(randn(14, (1, 1, 6, 8)))
    tiny = B.cosine_attention(q, k, v, Tensor(np.array([1e-8]))).data
    np.testing.assert_allclose(tiny, np.broadcast_to(v.data.mean(axis=2,
                                                                 keepdims=True),
                                                     v.shape), rtol=1e-5)


def test_cosine_attention_head_scales_independent():
    s = RngStream(15, INIT)
    q = Tensor(s.normal((1, 2, 5, 8)))
    k = Tensor(s.normal((1, 2, 5, 8)))
    v = Tensor(s.normal((1, 2, 5, 8)))
    base = B.cosine_attention(q, k, v, Tensor(np.array([4.0, 9.0]))).data
    bumped = B.cosine_attention(q, k, v, Tensor(np.array([4.0, 25.0]))).data
    np.testing.assert_array_equal(base[:, 0], bumped[:, 0])
    assert np.abs(base[:, 1] - bumped[:, 1]).max() > 1e-4


def test_neighborhood_window_saturates_at_borders():
    assert list(B._neighborhood_window(0, 3, 5)) == [0, 1, 2]
    assert list(B._neighborhood_window(2, 3, 5)) == [1, 2, 3]
    assert list(B._neighborhood_window(4, 3, 5)) == [2, 3, 4]
    assert list(B._neighborhood_window(1, 7, 4)) == [0, 1, 2, 3]


def test_neighborhood_index_counts():
    idx = B.neighborhood_index(5, 4, 3)
    assert idx.shape == (20, 9)
    idx = B.neighborhood_index(2, 3, 7)  # kernel larger than the map
    assert idx.shape == (6, 6)
    row = idx[0]
    assert sorted(row.tolist()) == list(range(6))


def test_neighborhood_dense_equals_windowed():
    s = RngStream(16, INIT)
    for h, w, kernel in [(5, 5, 3), (4, 6, 3), (7, 7, 5), (3, 8, 5)]:
        n = h * w
        q = Tensor(s.normal((2, 2, n, 8), dtype=np.float64))
        k = Tensor(s.normal((2, 2, n, 8), dtype=np.float64))
        v = Tensor(s.normal((2, 2, n, 8), dtype=np.float64))
        tau = Tensor(np.array([3.0, 12.0]))
        a = B.neighborhood_attention(q, k, v, tau, h, w, kernel, mode="dense").data
        b = B.neighborhood_attention(q, k, v, tau, h, w, kernel, mode="windowed").data
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_neighborhood_equals_global_when_kernel_covers(rnd):
    s = RngStream(17, INIT)
    for case in range(20):
        h = int(s.integers(2, 7, (1,))[0])
        w = int(s.integers(2, 7, (1,))[0])
        kernel = max(h, w) + 1 - (max(h, w) % 2)
        n = h * w
        q = Tensor(s.normal((1, 2, n, 8), dtype=np.float64))
        k = Tensor(s.normal((1, 2, n, 8), dtype=np.float64))
        v = Tensor(s.normal((1, 2, n, 8), dtype=np.float64))
        tau = Tensor(np.array([5.0, 10.0]))
        ref = B.cosine_attention(q, k, v, tau).data
        for mode in ("dense", "windowed"):
            got = B.neighborhood_attention(q, k, v, tau, h, w, kernel, mode=mode).data
            assert np.abs(got - ref).max() < 1e-5


def test_neighborhood_locality():
    """A far-away value perturbation must not leak into a local query."""
    h = w = 9
    n = h * w
    s = RngStream(18, INIT)
    q = Tensor(s.normal((1, 1, n, 8)))
    k = Tensor(s.normal((1, 1, n, 8)))
    v0 = s.normal((1, 1, n, 8))
    v1 = v0.copy()
    v1[0, 0, -1] += 100.0  # bottom-right corner token
    tau = Tensor(np.array([8.0]))
    a = B.neighborhood_attention(q, k, Tensor(v0), tau, h, w, 3).data
    b = B.neighborhood_attention(q, k, Tensor(v1), tau, h, w, 3).data
    # query (0,0) sees only the 3x3 top-left block: unchanged
    np.testing.assert_array_equal(a[0, 0, 0], b[0, 0, 0])
    assert np.abs(a[0, 0, -1] - b[0, 0, -1]).max() > 1.0


def test_neighborhood_rejects_even_kernel():
    q = Tensor(np.zeros((1, 1, 4, 8), dtype=np.float32))
    with pytest.raises(ValueError):
        B.neighborhood_attention(q, q, q, Tensor(np.array([1.0], dtype=np.float32)),
                                 2, 2, 4)


def test_swin_order_is_permutation():
    for shift in (0, 2):
        order = B.swin_window_order(8, 8, 4, shift)
        assert sorted(order.tolist()) == list(range(64))


def test_swin_equals_global_when_window_covers():
    s = RngStream(19, INIT)
    for shifted in (False, True):
        q = Tensor(s.normal((2, 2, 16, 8), dtype=np.float64))
        k = Tensor(s.normal((2, 2, 16, 8), dtype=np.float64))
        v = Tensor(s.normal((2, 2, 16, 8), dtype=np.float64))
        tau = Tensor(np.array([6.0, 11.0]))
        ref = B.cosine_attention(q, k, v, tau).data
        got = B.swin_attention(q, k, v, tau, 4, 4, 4, shifted=shifted).data
        assert np.abs(got - ref).max() < 1e-5


def test_swin_shift_changes_grouping_without_masking():
    s = RngStream(20, INIT)
    q = Tensor(s.normal((1, 1, 16, 8), dtype=np.float64))
    k = Tensor(s.normal((1, 1, 16, 8), dtype=np.float64))
    v = Tensor(s.normal((1, 1, 16, 8), dtype=np.float64))
    tau = Tensor(np.array([7.0]))
    plain = B.swin_attention(q, k, v, tau, 4, 4, 2, shifted=False).data
    shifted = B.swin_attention(q, k, v, tau, 4, 4, 2, shifted=True).data
    assert np.abs(plain - shifted).max() > 1e-6


def test_swin_rejects_nondivisible_map():
    q = Tensor(np.zeros((1, 1, 15, 8), dtype=np.float32))
    with pytest.raises(ValueError):
        B.swin_attention(q, q, q, Tensor(np.array([1.0], dtype=np.float32)), 3, 5, 2)


def test_self_attention_tau_init_and_heads():
    attn = B.SelfAttention(32, 8, "global", RngStream(21, INIT))
    assert attn.tau.shape == (4,)
    np.testing.assert_array_equal(attn.tau.data, 10.0)


# ----------------------------------------------------------------------
# feedforward
# ----------------------------------------------------------------------
def test_geglu_hidden_width_and_gate():
    ffn = B.GEGLUFeedForward(8, RngStream(22, INIT), dtype=np.float64)
    assert ffn.up_gate.weight.shape == (24, 8)
    assert ffn.up_value.weight.shape == (24, 8)
    assert ffn.down.weight.shape == (8, 24)
    assert ffn.up_gate.bias is None and ffn.down.bias is None
    x = randn(23, (2, 5, 8))
    # replicate: gelu(gate branch) * value branch, then the down projection
    ffn.down.weight.data = randn(24, (8, 24)) * 0.1
    got = ffn(Tensor(x)).data
    gate = x @ ffn.up_gate.weight.data.T
    val = x @ ffn.up_value.weight.data.T
    hidden = T.gelu(Tensor(gate)).data * val
    np.testing.assert_allclose(got, hidden @ ffn.down.weight.data.T, rtol=1e-12)


def test_geglu_zero_at_construction():
    ffn = B.GEGLUFeedForward(8, RngStream(25, INIT))
    x = Tensor(randn(26, (2, 3, 8), dtype=np.float32))
    np.testing.assert_array_equal(ffn(x).data, 0.0)


def test_geglu_dropout_deterministic_and_off_without_stream():
    ffn = B.GEGLUFeedForward(8, RngStream(27, INIT), dropout_p=0.5,
                             dtype=np.float64)
    ffn.down.weight.data = randn(28, (8, 24)) * 0.1
    x = Tensor(randn(29, (2, 3, 8)))
    a = ffn(x, drop_rng=RngStream(1, NOISE, 5)).data
    b = ffn(x, drop_rng=RngStream(1, NOISE, 5)).data
    c = ffn(x, drop_rng=RngStream(1, NOISE, 6)).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    eval_out = ffn(x).data  # no stream: dropout off
    full = ffn(x, drop_rng=None).data
    np.testing.assert_array_equal(eval_out, full)


# ----------------------------------------------------------------------
# full block
# ----------------------------------------------------------------------
@pytest.mark.parametrize("kind,hw,kw", [
    ("neighborhood", (3, 4), {"kernel": 3}),
    ("global", (3, 4), {}),
    ("swin", (4, 4), {"window": 2}),
])
def test_block_identity_at_construction(kind, hw, kw):
    blk = B.HDiTBlock(8, 8, 12, kind, RngStream(30, INIT), **kw)
    x = Tensor(randn(31, (2, hw[0] * hw[1], 8), dtype=np.float32))
    cond = Tensor(randn(32, (2, 12), dtype=np.float32))
    np.testing.assert_array_equal(blk(x, cond, hw).data, x.data)


def test_block_single_conditioning_projection():
    blk = B.HDiTBlock(8, 8, 12, "global", RngStream(33, INIT))
    cond_params = [n for n, _ in blk.named_parameters() if "cond_to_scale" in n]
    # one Linear (weight + bias) serving both norms
    assert len(cond_params) == 2, cond_params


def test_block_conditioning_reaches_output():
    blk = B.HDiTBlock(8, 8, 12, "global", RngStream(34, INIT), dtype=np.float64)
    # open the gates so the block is not an identity
    s = RngStream(35, INIT)
    for name, p in blk.named_parameters():
        if p.data.ndim >= 2:
            p.data = p.data + 0.1 * s.normal(p.data.shape)
    x = Tensor(randn(36, (1, 12, 8)))
    out1 = blk(x, Tensor(randn(37, (1, 12))), (3, 4)).data
    out2 = blk(x, Tensor(randn(38, (1, 12))), (3, 4)).data
    assert np.abs(out1 - out2).max() > 1e-9


# ----------------------------------------------------------------------
# mapping network
# ----------------------------------------------------------------------
def test_mapping_rejects_bad_inputs():
    m = B.MappingNetwork(16, 1, 4, RngStream(40, INIT))
    with pytest.raises(ValueError):
        m(np.array([0.0]), None)
    with pytest.raises(ValueError):
        m(np.array([-1.0]), None)
    with pytest.raises(ValueError):
        m(np.array([1.0]), np.array([7]))


def test_mapping_uncond_row_is_last():
    m = B.MappingNetwork(16, 1, 4, RngStream(41, INIT))
    assert m.uncond_id == 4
    assert m.class_embed.shape == (5, 16)
    out_none = m(np.array([0.7]), None).data
    out_uncond = m(np.array([0.7]), np.array([4])).data
    np.testing.assert_array_equal(out_none, out_uncond)
    out_class = m(np.array([0.7]), np.array([0])).data
    assert not np.array_equal(out_none, out_class)


def test_mapping_depends_on_sigma():
    m = B.MappingNetwork(16, 2, 2, RngStream(42, INIT))
    a = m(np.array([0.1]), np.array([1])).data
    b = m(np.array([10.0]), np.array([1])).data
    assert np.abs(a - b).max() > 1e-6


# ----------------------------------------------------------------------
# token rearrangement
# ----------------------------------------------------------------------
def test_space_depth_round_trip():
    x = Tensor(randn(50, (2, 6, 8, 5)))
    rt = B.depth_to_space(B.space_to_depth(x, 2), 2)
    np.testing.assert_array_equal(rt.data, x.data)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([1, 2, 4]),
       st.integers(1, 3), st.integers(1, 3))
def test_property_space_depth_inverse(seed, p, hb, wb):
    x = RngStream(seed, INIT).normal((1, p * hb, p * wb, 3), dtype=np.float64)
    t = Tensor(x)
    np.testing.assert_array_equal(
        B.depth_to_space(B.space_to_depth(t, p), p).data, x)


def test_space_to_depth_channel_order():
    # 2x2 single-channel patch flattens patch-major: (0,0),(0,1),(1,0),(1,1)
    x = np.arange(4, dtype=np.float64).reshape(1, 2, 2, 1)
    got = B.space_to_depth(Tensor(x), 2).data
    np.testing.assert_array_equal(got.reshape(-1), [0, 1, 2, 3])


def test_patch_embed_shape():
    pe = B.PatchEmbed(4, 3, 16, RngStream(51, INIT))
    img = Tensor(randn(52, (2, 8, 8, 3), dtype=np.float32))
    assert pe(img).shape == (2, 2, 2, 16)


def test_token_merge_split_shapes():
    merge = B.TokenMerge(8, 16, RngStream(53, INIT))
    split = B.TokenSplit(16, 8, RngStream(54, INIT))
    x = Tensor(randn(55, (2, 4, 4, 8), dtype=np.float32))
    m = merge(x)
    assert m.shape == (2, 2, 2, 16)
    assert split(m).shape == (2, 4, 4, 8)


def test_lerp_endpoints_and_midpoint():
    skip = Tensor(randn(56, (2, 3, 4)))
    up = Tensor(randn(57, (2, 3, 4)))
    np.testing.assert_array_equal(
        B.lerp_merge(skip, up, Tensor(np.array(1.0))).data, skip.data)
    np.testing.assert_array_equal(
        B.lerp_merge(skip, up, Tensor(np.array(0.0))).data, up.data)
    mid = B.lerp_merge(skip, up, Tensor(np.array(0.5))).data
    np.testing.assert_allclose(mid, 0.5 * (skip.data + up.data), rtol=1e-12)


def test_lerp_skip_initialized_at_half():
    ls = B.LerpSkip()
    assert ls.f.data.reshape(-1)[0] == 0.5
