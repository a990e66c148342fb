import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dropforge.numerics import (
    FFNWeights,
    attention_pool,
    ffn,
    gelu,
    layer_norm,
    load_tensors,
    save_tensors,
    softmax,
)

finite = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)


# frozen from a scalar math.erf evaluation of the same composition
FFN_X = [0.5, -1.0]
FFN_FIXTURE = FFNWeights(
    w1=[[0.2, -0.4, 0.6], [0.1, 0.3, -0.5]],
    b1=[0.0, 0.1, -0.2],
    w2=[[1.0, 0.0], [0.0, 1.0], [0.5, -0.5]],
    b2=[0.1, -0.1],
    gamma=[1.0, 0.5, 2.0],
    beta=[0.0, 0.1, -0.1],
)
FFN_EXPECTED = [1.020161942427366, -1.8112788562350004]


def scalar_ffn(x, w):
    h = [sum(x[i] * w.w1[i][j] for i in range(w.d_in)) + w.b1[j] for j in range(w.d_hidden)]
    h = [v * 0.5 * (1 + math.erf(v / math.sqrt(2))) for v in h]
    m = sum(h) / len(h)
    var = sum((v - m) ** 2 for v in h) / len(h)
    n = [(v - m) / math.sqrt(var + 1e-12) * w.gamma[j] + w.beta[j] for j, v in enumerate(h)]
    return [sum(n[j] * w.w2[j][k] for j in range(w.d_hidden)) + w.b2[k] for k in range(w.d_out)]


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax([0, 0]), [0.5, 0.5])

    def test_closed_form(self):
        np.testing.assert_allclose(softmax([1, 2, 3]), [0.09003, 0.24473, 0.66524], atol=1e-5)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            softmax([])

    def test_neg_inf_gets_zero_mass(self):
        p = softmax([0.0, -np.inf, 1.0])
        assert p[1] == 0.0
        assert p.sum() == pytest.approx(1.0)

    @given(arrays(np.float64, st.integers(1, 30), elements=finite), st.floats(-1e3, 1e3))
    def test_distribution_and_shift_invariance(self, v, c):
        p = softmax(v)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) <= 1e-6
        np.testing.assert_allclose(p, softmax(v + c), atol=1e-6)
        assert p[np.argmax(v)] == p.max()


class TestGelu:
    def test_values(self):
        assert gelu(0.0) == 0.0
        assert gelu(1.0) == pytest.approx(0.84134, abs=1e-4)

    def test_asymptotes(self):
        assert gelu(20.0) == pytest.approx(20.0)
        assert abs(gelu(-20.0)) < 1e-12

    @given(st.floats(-30, 30))
    def test_matches_erf_form(self, x):
        assert gelu(x) == pytest.approx(x * 0.5 * (1 + math.erf(x / math.sqrt(2))), abs=1e-12)


class TestLayerNorm:
    def test_two_values(self):
        np.testing.assert_allclose(layer_norm([1, 3], [1, 1], [0, 0]), [-1, 1], atol=1e-6)

    def test_constant(self):
        np.testing.assert_allclose(layer_norm([4.0] * 5, np.ones(5), np.zeros(5)), 0.0, atol=1e-9)

    def test_standardized_input_unchanged(self):
        v = np.array([-1.0, 1.0, -1.0, 1.0])
        np.testing.assert_allclose(layer_norm(v, np.ones(4), np.zeros(4)), v, atol=1e-6)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            layer_norm([1, 2, 3], [1, 1], [0, 0])

    @given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-100, 100)))
    def test_moments(self, v):
        if v.var() < 1e-3:
            return
        out = layer_norm(v, np.ones(len(v)), np.zeros(len(v)))
        assert abs(out.mean()) <= 1e-6
        assert abs(out.var() - 1) <= 1e-4


class TestFFN:
    def test_zero_weights(self):
        np.testing.assert_array_equal(ffn([1.0, 2.0, 3.0], FFNWeights.zeros(3, 4, 2)), [0.0, 0.0])

    @pytest.mark.parametrize("x", [-3.0, 0.0, 0.7, 12.0])
    def test_single_unit_collapses(self, x):
        w = FFNWeights([[1.0]], [0.0], [[1.0]], [0.0], [1.0], [0.0])
        assert ffn([x], w)[0] == pytest.approx(0.0, abs=1e-9)

    def test_fixture(self):
        out = ffn(FFN_X, FFN_FIXTURE)
        np.testing.assert_allclose(out, FFN_EXPECTED, atol=1e-9)
        np.testing.assert_allclose(out, scalar_ffn(FFN_X, FFN_FIXTURE), atol=1e-9)

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            ffn([1.0, 2.0, 3.0], FFN_FIXTURE)
        with pytest.raises(ValueError):
            FFNWeights(np.zeros((2, 3)), np.zeros(3), np.zeros((4, 2)), np.zeros(2), np.ones(3), np.zeros(3))

    def test_rowwise(self):
        X = np.array([FFN_X, [1.0, 1.0]])
        out = ffn(X, FFN_FIXTURE)
        np.testing.assert_allclose(out[1], scalar_ffn([1.0, 1.0], FFN_FIXTURE), atol=1e-9)


class TestAttentionPool:
    def test_fixture(self):
        X = [[1.0, 2.0], [0.0, -1.0], [2.0, 0.5]]
        alpha, h = attention_pool(X, [1.0, 0.0])
        np.testing.assert_allclose(alpha, [0.24472847105479764, 0.09003057317038046, 0.6652409557748219])
        np.testing.assert_allclose(h, [1.5752103826044415, 0.7320468468266257])

    def test_identical_rows(self):
        X = np.tile([0.3, -2.0, 5.0], (4, 1))
        alpha, h = attention_pool(X, [0.1, 0.2, 0.3])
        np.testing.assert_allclose(alpha, 0.25)
        np.testing.assert_allclose(h, X[0])

    def test_saturation(self):
        X = np.array([[1.0, 2.0], [3.0, 4.0], [51.0, -7.0]])
        _, h = attention_pool(X, [1.0, 0.0])
        np.testing.assert_allclose(h, X[2], atol=1e-6 * 51)

    def test_ffn_scorer(self):
        scorer = FFNWeights.zeros(2, 3, 1)
        alpha, _ = attention_pool([[1.0, 2.0], [3.0, 4.0]], scorer)
        np.testing.assert_allclose(alpha, [0.5, 0.5])

    def test_empty(self):
        with pytest.raises(ValueError):
            attention_pool(np.zeros((0, 3)), np.zeros(3))

    @settings(max_examples=50)
    @given(
        arrays(np.float64, st.tuples(st.integers(1, 8), st.just(4)), elements=st.floats(-50, 50)),
        arrays(np.float64, 4, elements=st.floats(-5, 5)),
    )
    def test_convex_hull(self, X, w):
        _, h = attention_pool(X, w)
        slack = 1e-9 * (1 + np.abs(X).max())
        assert np.all(h >= X.min(axis=0) - slack)
        assert np.all(h <= X.max(axis=0) + slack)


def test_tensor_roundtrip(tmp_path):
    t = {"a.w": np.arange(6, dtype=float).reshape(2, 3) / 7, "b": np.array([1.5, -2.25])}
    save_tensors(tmp_path / "w", t, {"note": "x"})
    back, meta = load_tensors(tmp_path / "w")
    assert meta == {"note": "x"}
    np.testing.assert_array_equal(back["a.w"], t["a.w"].astype(np.float32))
    raw = (tmp_path / "w" / "a.w.f32").read_bytes()
    assert len(raw) == 6 * 4
    assert np.frombuffer(raw, "<f4")[1] == np.float32(1 / 7)
