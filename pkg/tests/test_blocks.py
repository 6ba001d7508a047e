import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvlm import oracle
from mvlm.blocks import (AttentionParams, ConvParams, LayerKv, LayerNormParams, RmsNormParams, SwigluParams,
                         apply_rope, attend, causal_attention, conv_on_grid, layer_norm, rms_norm, rope_table,
                         swiglu_ffn)
from mvlm.errors import ContextOverflowError, DimensionError, PositionRangeError


def _attn(rng, d=16, heads=2):
    w = [(rng.standard_normal((d, d)) / math.sqrt(d)).astype(np.float32) for _ in range(4)]
    return AttentionParams(*w, num_heads=heads)


# -- norms -------------------------------------------------------------------

def test_rms_norm_zero_row():
    out = rms_norm(np.zeros((1, 4), np.float32), RmsNormParams(np.ones(4, np.float32)))
    np.testing.assert_array_equal(out, 0)


def test_rms_norm_hand_value():
    p = RmsNormParams(np.ones(2, np.float32), eps=1e-12)
    out = rms_norm(np.array([[3.0, 4.0]], np.float32), p)
    # [3, 4] / sqrt(12.5), frozen from the oracle
    ref = oracle.rms_norm([[3.0, 4.0]], [1.0, 1.0], 1e-12)
    np.testing.assert_allclose(ref, [[0.848528137423857, 1.131370849898476]], atol=1e-12)
    np.testing.assert_allclose(out, ref, atol=1e-6)


def test_rms_norm_scale_invariance(rng):
    x = rng.standard_normal((3, 8)).astype(np.float32)
    p = RmsNormParams(rng.standard_normal(8).astype(np.float32), eps=1e-12)
    np.testing.assert_allclose(rms_norm(np.float32(7.3) * x, p), rms_norm(x, p), atol=1e-6)


def test_rms_norm_unit_mean_square(rng):
    x = rng.standard_normal((5, 32)).astype(np.float32) * 3
    out = rms_norm(x, RmsNormParams(np.ones(32, np.float32))).astype(np.float64)
    np.testing.assert_allclose((out ** 2).mean(axis=1), 1.0, atol=1e-4)


def test_rms_norm_width_mismatch():
    with pytest.raises(DimensionError):
        rms_norm(np.zeros((1, 3), np.float32), RmsNormParams(np.ones(4, np.float32)))


def test_layer_norm_constant_row():
    p = LayerNormParams(np.ones(4, np.float32), np.zeros(4, np.float32))
    np.testing.assert_array_equal(layer_norm(np.full((1, 4), 2.5, np.float32), p), 0)


def test_layer_norm_two_points():
    p = LayerNormParams(np.ones(2, np.float32), np.zeros(2, np.float32), eps=1e-12)
    np.testing.assert_allclose(layer_norm(np.array([[1.0, 3.0]], np.float32), p), [[-1, 1]], atol=1e-6)


def test_layer_norm_matches_oracle(rng):
    x = rng.standard_normal((4, 8)).astype(np.float32)
    g = rng.standard_normal(8).astype(np.float32)
    b = rng.standard_normal(8).astype(np.float32)
    np.testing.assert_allclose(layer_norm(x, LayerNormParams(g, b)), oracle.layer_norm(x, g, b), atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (3, 16), elements=st.floats(-100, 100, width=32)))
def test_layer_norm_standardizes(x):
    if (x.std(axis=1) < 1e-2).any():
        return
    p = LayerNormParams(np.ones(16, np.float32), np.zeros(16, np.float32))
    out = layer_norm(x, p).astype(np.float64)
    var = x.astype(np.float64).var(axis=1)
    assert np.abs(out.mean(axis=1)).max() < 1e-6
    # eps shrinks the output variance to var / (var + eps)
    np.testing.assert_allclose(out.var(axis=1), var / (var + p.eps), atol=1e-6)


def test_layer_norm_gain_bias_shapes():
    with pytest.raises(DimensionError):
        LayerNormParams(np.ones(3, np.float32), np.zeros(4, np.float32))


# -- rotary ------------------------------------------------------------------

def test_rope_position_zero_is_identity(rng):
    x = rng.standard_normal((1, 2, 8)).astype(np.float32)
    np.testing.assert_array_equal(apply_rope(x, [0], rope_table(8, 4)), x)


def test_rope_single_pair_rotation():
    out = apply_rope(np.array([[[1.0, 0.0]]], np.float32), [1], rope_table(2, 4))
    np.testing.assert_allclose(out[0, 0], [math.cos(1.0), math.sin(1.0)], atol=1e-7)


def test_rope_matches_oracle(rng):
    x = rng.standard_normal((6, 3, 8)).astype(np.float32)
    pos = [0, 1, 2, 7, 11, 15]
    np.testing.assert_allclose(apply_rope(x, pos, rope_table(8, 16)), oracle.rope(x, pos), atol=1e-6)


def test_rope_relative_pair():
    rng = np.random.default_rng(3)
    q = rng.uniform(-1, 1, (1, 1, 8)).astype(np.float32)
    k = rng.uniform(-1, 1, (1, 1, 8)).astype(np.float32)
    t = rope_table(8, 16)

    def dot(m, n):
        return float(np.dot(apply_rope(q, [m], t).ravel().astype(np.float64), apply_rope(k, [n], t).ravel()))

    assert dot(5, 2) == pytest.approx(dot(8, 5), abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (2, 1, 8), elements=st.floats(-10, 10, width=32)), st.integers(0, 63))
def test_rope_preserves_pair_norms(x, pos):
    out = apply_rope(x, [pos, 63 - pos], rope_table(8, 64)).astype(np.float64)
    x = x.astype(np.float64)
    before = np.hypot(x[..., 0::2], x[..., 1::2])
    after = np.hypot(out[..., 0::2], out[..., 1::2])
    np.testing.assert_allclose(after, before, atol=1e-5, rtol=1e-6)


def test_rope_position_out_of_range():
    with pytest.raises(PositionRangeError):
        apply_rope(np.zeros((1, 1, 4), np.float32), [4], rope_table(4, 4))


def test_rope_odd_head_dim():
    with pytest.raises(DimensionError):
        rope_table(5, 4)


# -- attention ---------------------------------------------------------------

def test_single_token_attends_to_itself():
    rng = np.random.default_rng(0)
    q = rng.standard_normal((1, 2, 4)).astype(np.float32)
    v = rng.standard_normal((1, 2, 4)).astype(np.float32)
    np.testing.assert_array_equal(attend(q, q, v, causal_offset=0), v)


def test_zero_logits_average_visible_prefix():
    n = 5
    q = np.zeros((n, 1, 4), np.float32)
    v = np.arange(n * 4, dtype=np.float32).reshape(n, 1, 4)
    out = attend(q, q, v, causal_offset=0)
    for i in range(n):
        np.testing.assert_allclose(out[i, 0], v[:i + 1, 0].mean(axis=0), rtol=1e-6)


def test_attention_matches_oracle(rng):
    p = _attn(rng)
    x = rng.standard_normal((6, 16)).astype(np.float32)
    out = causal_attention(x, p, rope_table(8, 32))
    ref = oracle.causal_attention(x, p.wq, p.wk, p.wv, p.wo, 2)
    np.testing.assert_allclose(out, ref, atol=1e-5)


def test_incremental_attention_matches_full(rng):
    p = _attn(rng)
    x = rng.standard_normal((5, 16)).astype(np.float32)
    rope = rope_table(8, 32)
    full = causal_attention(x, p, rope)
    cache = LayerKv(32, 2, 8)
    steps = np.concatenate([causal_attention(x[i:i + 1], p, rope, cache) for i in range(5)])
    np.testing.assert_allclose(steps, full, atol=1e-5)
    assert cache.filled == 5


@pytest.mark.parametrize("split", [(1, 4), (2, 3), (3, 1, 1), (5,)])
def test_attention_any_chunking(split):
    rng = np.random.default_rng(sum(split) * 7 + len(split))
    p = _attn(rng)
    x = rng.standard_normal((5, 16)).astype(np.float32)
    rope = rope_table(8, 32)
    cache = LayerKv(32, 2, 8)
    parts, at = [], 0
    for size in split:
        parts.append(causal_attention(x[at:at + size], p, rope, cache))
        at += size
    np.testing.assert_allclose(np.concatenate(parts), causal_attention(x, p, rope), atol=1e-5)


def test_attention_never_sees_future(rng):
    p = _attn(rng)
    x = rng.standard_normal((6, 16)).astype(np.float32)
    rope = rope_table(8, 32)
    base = causal_attention(x, p, rope)
    for j in range(1, 6):
        y = x.copy()
        y[j] += rng.standard_normal(16).astype(np.float32) * 5
        out = causal_attention(y, p, rope)
        np.testing.assert_array_equal(out[:j], base[:j])


def test_attention_cache_mismatch_and_overflow(rng):
    p = _attn(rng)
    rope = rope_table(8, 4)
    with pytest.raises(DimensionError):
        causal_attention(np.zeros((1, 16), np.float32), p, rope, LayerKv(4, 4, 4))
    cache = LayerKv(4, 2, 8)
    causal_attention(np.zeros((3, 16), np.float32), p, rope, cache)
    with pytest.raises(ContextOverflowError):
        causal_attention(np.zeros((2, 16), np.float32), p, rope, cache)


# -- SwiGLU ------------------------------------------------------------------

def test_swiglu_zero_input(rng):
    w = [rng.standard_normal(s).astype(np.float32) for s in ((8, 16), (8, 16), (16, 8))]
    np.testing.assert_array_equal(swiglu_ffn(np.zeros((2, 8), np.float32), SwigluParams(*w)), 0)


def test_swiglu_identity_weights():
    eye = np.eye(2, dtype=np.float32)
    out = swiglu_ffn(np.ones((1, 2), np.float32), SwigluParams(eye, eye, eye))
    # silu(1) * 1, frozen from the oracle
    ref = oracle.swiglu([[1.0, 1.0]], eye, eye, eye)
    np.testing.assert_allclose(ref, [[0.7310585786300049] * 2], atol=1e-12)
    np.testing.assert_allclose(out, ref, atol=1e-6)


def test_swiglu_matches_oracle(rng):
    w = [(rng.standard_normal(s) / 4).astype(np.float32) for s in ((8, 24), (8, 24), (24, 8))]
    x = rng.standard_normal((3, 8)).astype(np.float32)
    np.testing.assert_allclose(swiglu_ffn(x, SwigluParams(*w)), oracle.swiglu(x, *w), atol=1e-6)


def test_swiglu_width_mismatch(rng):
    eye = np.eye(2, dtype=np.float32)
    with pytest.raises(DimensionError):
        swiglu_ffn(np.ones((1, 3), np.float32), SwigluParams(eye, eye, eye))


# -- grid convolutions -------------------------------------------------------

def _delta_kernel(c, k=3):
    w = np.zeros((c, k, k), np.float32)
    w[:, k // 2, k // 2] = 1
    return w


def test_depthwise_delta_is_identity(rng):
    x = rng.standard_normal((5, 5, 3)).astype(np.float32)
    out = conv_on_grid(x, ConvParams("depthwise", _delta_kernel(3), stride=1, padding=1))
    np.testing.assert_array_equal(out, x)


def test_depthwise_stride2_shape():
    out = conv_on_grid(np.ones((4, 4, 1), np.float32), ConvParams("depthwise", _delta_kernel(1), stride=2, padding=1))
    assert out.shape == (2, 2, 1)


@pytest.mark.parametrize("side", [3, 4, 5, 6, 7])
def test_depthwise_stride2_is_ceil_half(side):
    out = conv_on_grid(np.ones((side, side, 2), np.float32),
                       ConvParams("depthwise", _delta_kernel(2), stride=2, padding=1))
    assert out.shape == (math.ceil(side / 2), math.ceil(side / 2), 2)


def test_depthwise_stride2_matches_oracle(rng):
    x = rng.standard_normal((6, 6, 4)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    out = conv_on_grid(x, ConvParams("depthwise", w, b, stride=2, padding=1))
    np.testing.assert_allclose(out, oracle.depthwise_conv(x, w, b, 2, 1), atol=1e-5)


def test_depthwise_has_no_channel_mixing(rng):
    x = np.zeros((4, 4, 3), np.float32)
    x[..., 1] = rng.standard_normal((4, 4))
    w = rng.standard_normal((3, 3, 3)).astype(np.float32)
    out = conv_on_grid(x, ConvParams("depthwise", w, stride=1, padding=1))
    assert not out[..., 0].any() and not out[..., 2].any()


def test_pointwise_matches_oracle(rng):
    x = rng.standard_normal((3, 3, 4)).astype(np.float32)
    w = rng.standard_normal((4, 6)).astype(np.float32)
    b = rng.standard_normal(6).astype(np.float32)
    out = conv_on_grid(x, ConvParams("pointwise", w, b))
    assert out.shape == (3, 3, 6)
    np.testing.assert_allclose(out, oracle.pointwise_conv(x, w, b), atol=1e-5)


def test_oracle_conv_impulse_response(rng):
    x = np.zeros((4, 4, 1))
    x[1, 1, 0] = 1.0
    w = rng.standard_normal((1, 3, 3))
    out = oracle.depthwise_conv(x, w, None, 1, 1)
    # a delta reproduces the kernel, flipped, around the impulse
    np.testing.assert_allclose(out[0:3, 0:3, 0], w[0][::-1, ::-1])


def test_conv_rejections():
    with pytest.raises(DimensionError):
        ConvParams("depthwise", np.zeros((2, 2, 2), np.float32))
    with pytest.raises(DimensionError):
        ConvParams("pointwise", np.zeros((2, 2), np.float32), stride=2)
    with pytest.raises(DimensionError):
        conv_on_grid(np.zeros((4, 6, 1), np.float32), ConvParams("depthwise", _delta_kernel(1), padding=1),
                     require_square=True)
