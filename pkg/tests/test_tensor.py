import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvlm import oracle
from mvlm.errors import DimensionError, NanInputError
from mvlm.tensor import as_tensor, configured_threads, gelu, matmul, silu, softmax, thread_limit

finite = st.floats(-50, 50, allow_nan=False, width=32)
unit = st.floats(-1, 1, width=32)


def test_matmul_identity():
    out = matmul(np.eye(2, dtype=np.float32), np.array([[5, 6], [7, 8]], np.float32))
    np.testing.assert_array_equal(out, [[5, 6], [7, 8]])


def test_matmul_row_by_column():
    assert matmul(np.array([[1, 2]], np.float32), np.array([[3], [4]], np.float32))[0, 0] == 11


def test_matmul_matches_triple_loop(rng):
    a = rng.standard_normal((7, 5)).astype(np.float32)
    b = rng.standard_normal((5, 3)).astype(np.float32)
    ref = oracle.matmul(a, b)
    np.testing.assert_allclose(matmul(a, b), ref, rtol=1e-6, atol=1e-6)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(np.zeros((2, 3), np.float32), np.zeros((4, 2), np.float32))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (3, 4), elements=unit), arrays(np.float32, (3, 4), elements=unit),
       arrays(np.float32, (4, 2), elements=unit))
def test_matmul_is_linear(a, b, c):
    np.testing.assert_allclose(matmul(a + b, c), matmul(a, c) + matmul(b, c), atol=1e-5)


def test_softmax_uniform():
    np.testing.assert_allclose(softmax(np.zeros(4, np.float32)), [0.25] * 4)


def test_softmax_no_overflow():
    out = softmax(np.array([1000.0, 0.0], np.float32))
    assert out[0] == pytest.approx(1.0) and out[1] < 1e-30
    assert np.isfinite(out).all()


def test_softmax_matches_direct_formula(rng):
    x = rng.standard_normal(9).astype(np.float32)
    np.testing.assert_allclose(softmax(x), oracle.softmax(x), atol=1e-7)


def test_softmax_nan_raises():
    with pytest.raises(NanInputError):
        softmax(np.array([0.0, np.nan], np.float32))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float32, st.integers(1, 16), elements=st.floats(-1e4, 1e4, width=32)))
def test_softmax_is_probability_vector(x):
    p = softmax(x)
    assert (p >= 0).all()
    assert abs(float(p.astype(np.float64).sum()) - 1) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(arrays(np.float32, st.integers(1, 16), elements=finite), st.floats(-100, 100))
def test_softmax_shift_invariance(x, c):
    np.testing.assert_allclose(softmax(x + np.float32(c)), softmax(x), atol=1e-6)


def test_softmax_along_axis():
    x = np.array([[0.0, 0.0], [1.0, 1.0]], np.float32)
    np.testing.assert_allclose(softmax(x, axis=0), [[0.268941, 0.268941], [0.731059, 0.731059]], atol=1e-6)


def test_gelu_at_zero_and_asymptotes():
    out = gelu(np.array([0.0, 30.0, -30.0], np.float32))
    assert out[0] == 0.0
    assert out[1] == pytest.approx(30.0)
    assert abs(out[2]) < 1e-12


def test_gelu_at_one_against_series_erf():
    # frozen from the Decimal series oracle: 0.5 * (1 + erf(1/sqrt(2)))
    assert oracle.gelu([1.0])[0] == pytest.approx(0.8413447460685429, abs=1e-15)
    assert gelu(np.array([1.0], np.float32))[0] == pytest.approx(0.8413447460685429, abs=1e-6)


def test_gelu_matches_oracle(rng):
    x = rng.uniform(-6, 6, 50).astype(np.float32)
    np.testing.assert_allclose(gelu(x), oracle.gelu(x), atol=1e-6)


def test_oracle_erf_matches_math():
    for v in (-3.0, -0.5, 0.0, 0.1, 1.0, 2.5):
        assert oracle.erf(v) == pytest.approx(math.erf(v), abs=1e-15)


def test_silu():
    out = silu(np.array([0.0, 40.0], np.float32))
    assert out[0] == 0.0 and out[1] == pytest.approx(40.0)


def test_silu_matches_oracle(rng):
    x = rng.uniform(-20, 20, 64).astype(np.float32)
    np.testing.assert_allclose(silu(x), oracle.silu(x), rtol=1e-6, atol=1e-7)


def test_silu_extreme_negative_is_finite():
    assert np.isfinite(silu(np.array([-1e4], np.float32))).all()


def test_as_tensor_rank_limit():
    with pytest.raises(DimensionError):
        as_tensor(np.zeros((1, 1, 1, 1, 1)))
    assert as_tensor([[1, 2]]).dtype == np.float32


def test_thread_configuration(monkeypatch):
    monkeypatch.setenv("MVLM_THREADS", "3")
    assert configured_threads() == 3
    monkeypatch.delenv("MVLM_THREADS")
    assert configured_threads() == 1
    with thread_limit(1):
        pass
