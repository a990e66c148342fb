import math

import numpy as np
import pytest

from dropforge import heads
from dropforge.harness import MockConfig, gen_encoder_output, mock_head_weights
from dropforge.heads import (
    ANSWER_TYPES,
    EncoderOutput,
    HeadWeights,
    compute_heads,
    gather_numbers,
    predict_count,
    predict_negation,
    predict_signs,
    predict_span_boundaries,
    predict_span_count,
    predict_type,
    rerank_score,
    summarize,
)
from dropforge.numerics import FFNWeights

D = 4


def enc_for(example, fill=None):
    T = len(example.sequence)
    mats = [np.zeros((T, D)) if fill is None else fill.copy() for _ in range(4)]
    return EncoderOutput(*mats, sep1_index=example.sep1_index, sep2_index=example.sep2_index)


def two_way_ffn(d_in, pos_a, pos_b, d_out, col_a, col_b, bias=None):
    """Hidden width 2: unit ``a`` fires on input ``pos_a``, unit ``b`` on ``pos_b``.

    After layer norm the hidden vector is (1,-1), (-1,1) or (0,0), which the
    second projection maps onto columns ``col_a`` / ``col_b``.
    """
    w1 = np.zeros((d_in, 2))
    w1[pos_a, 0] = 1.0
    w1[pos_b, 1] = 1.0
    w2 = np.zeros((2, d_out))
    w2[0, col_a], w2[1, col_a] = 3.0, -3.0
    w2[0, col_b], w2[1, col_b] = -3.0, 3.0
    b2 = np.zeros(d_out) if bias is None else np.asarray(bias, float)
    return FFNWeights(w1, np.zeros(2), w2, b2, np.ones(2), np.zeros(2))


def with_ffn(w, name, f):
    ffns = dict(w.ffns)
    ffns[name] = f
    return HeadWeights(
        w.D, w.pool_q, w.pool_p, w.beta_q0, w.beta_q1, w.beta_q2, w.span_start, w.span_end,
        w.num_pool, w.expr_pool, w.sign_embed, ffns,
    )


def biased(name, width, index, d_in):
    f = FFNWeights.zeros(d_in, 2, width)
    b2 = np.zeros(width)
    b2[index] = 5.0
    return FFNWeights(f.w1, f.b1, f.w2, b2, f.gamma, f.beta)


@pytest.fixture
def zero_w():
    return HeadWeights.zeros(D)


class TestSummarize:
    def test_single_token_question(self, zero_w):
        T = 5  # [CLS] q [SEP] p [SEP]
        M = np.arange(T * D, dtype=float).reshape(T, D)
        enc = EncoderOutput(M, M, M, M, 2, 4)
        h_q2, h_p2, h_cls, *_ = summarize(enc, zero_w)
        np.testing.assert_array_equal(h_q2, M[1])
        np.testing.assert_array_equal(h_p2, M[3])
        np.testing.assert_array_equal(h_cls, M[0])

    def test_identical_rows(self, zero_w):
        M = np.tile([1.0, -2.0, 0.5, 3.0], (9, 1))
        enc = EncoderOutput(M, M, M, M, 3, 8)
        h_q2, h_p2, *_ = summarize(enc, HeadWeights.random(D, seed=1))
        np.testing.assert_allclose(h_q2, h_p2)

    def test_six_token_fixture(self):
        # [CLS] q q [SEP] p [SEP], width 2
        M2 = np.array([[9, 9], [1.0, 2.0], [3.0, -1.0], [9, 9], [0.5, 0.5], [9, 9]])
        M0 = np.array([[0, 0], [2.0, 0.0], [0.0, 2.0], [0, 0], [1, 1], [0, 0]])
        zeros = np.zeros_like(M2)
        enc = EncoderOutput(M0, zeros, M2, zeros, 3, 5)
        w = HeadWeights.zeros(2)
        w.pool_q = np.array([1.0, 0.0])
        h_q2, h_p2, h_cls, g_q0, g_q1, g_q2 = summarize(enc, w)
        a = [math.exp(1.0), math.exp(3.0)]
        a = [x / sum(a) for x in a]
        np.testing.assert_allclose(h_q2, [a[0] * 1 + a[1] * 3, a[0] * 2 - a[1] * 1])
        np.testing.assert_allclose(h_p2, [0.5, 0.5])
        np.testing.assert_allclose(g_q0, [1.0, 1.0])  # zero FFN scorer: plain mean
        np.testing.assert_allclose(g_q2, [2.0, 0.5])
        np.testing.assert_allclose(g_q1, [0.0, 0.0])

    def test_empty_segment(self, zero_w):
        M = np.zeros((4, D))
        with pytest.raises(ValueError):
            summarize(EncoderOutput(M, M, M, M, 1, 3), zero_w)


class TestDistributions:
    def test_zero_weights_uniform(self, census, zero_w):
        ex = census["q3"]
        out = compute_heads(enc_for(ex), ex.numbers, zero_w)
        np.testing.assert_allclose(out.p_type, 0.25)
        assert len(out.p_type) == len(ANSWER_TYPES) == 4
        np.testing.assert_allclose(out.p_sign, 1 / 3)
        np.testing.assert_allclose(out.p_count, 0.1)
        assert len(out.p_count) == 10
        np.testing.assert_allclose(out.p_negation, 0.5)
        np.testing.assert_allclose(out.p_span_count, 1 / 8)
        assert len(out.p_span_count) == 8

    def test_every_distribution_sums_to_one(self, census):
        ex = census["q2"]
        w = mock_head_weights(32, seed=4)
        out = compute_heads(gen_encoder_output(ex, MockConfig(seed=4)), ex.numbers, w)
        for p in (out.p_type, out.p_start, out.p_end, out.p_count, out.p_span_count, *out.p_sign, *out.p_negation):
            assert np.all(p >= 0)
            assert abs(p.sum() - 1) <= 1e-6
        markers = [0, ex.sep1_index, ex.sep2_index]
        assert np.all(out.p_start[markers] == 0.0)
        assert np.all(out.p_end[markers] == 0.0)

    def test_logit_shift_leaves_type_unchanged(self, census):
        ex = census["q1"]
        w = mock_head_weights(32, seed=2)
        h = summarize(gen_encoder_output(ex, MockConfig(seed=2)), w)[:3]
        f = w.ffns["type"]
        shifted = with_ffn(w, "type", FFNWeights(f.w1, f.b1, f.w2, f.b2 + 7.5, f.gamma, f.beta))
        np.testing.assert_allclose(predict_type(*h, w), predict_type(*h, shifted), atol=1e-12)

    def test_type_oracle(self, zero_w):
        w = with_ffn(zero_w, "type", biased("type", 4, ANSWER_TYPES.index("add_sub"), 3 * D))
        p = predict_type(np.ones(D), np.ones(D), np.ones(D), w)
        assert ANSWER_TYPES[int(np.argmax(p))] == "add_sub"

    def test_count_and_span_count_oracles(self, zero_w):
        U = np.zeros((0, 2 * D))
        w = with_ffn(zero_w, "count", biased("count", 10, 4, 5 * D))
        w = with_ffn(w, "span_count", biased("span_count", 8, 1, 3 * D))
        h = np.zeros(D)
        assert int(np.argmax(predict_count(U, h, h, h, w))) == 4
        assert int(np.argmax(predict_span_count(h, h, h, w))) == 1

    def test_no_numbers(self, zero_w):
        U = np.zeros((0, 2 * D))
        h = np.ones(D)
        assert predict_signs(U, h, h, h, zero_w).shape == (0, 3)
        assert predict_negation(U, h, h, h, zero_w).shape == (0, 2)
        p = predict_count(U, h, h, h, HeadWeights.random(D, seed=3))
        assert p.shape == (10,) and abs(p.sum() - 1) <= 1e-6


class TestSpanBoundaries:
    def test_oracle_peaks_on_german(self, census, zero_w):
        ex = census["q2"]
        k = next(i for i, t in enumerate(ex.sequence) if t.text == "German")
        fill = np.zeros((len(ex.sequence), D))
        fill[k, 0] = 10.0
        enc = enc_for(ex, fill)
        w = zero_w
        w.span_start = np.zeros(4 * D)
        w.span_start[0] = 1.0
        w.span_end = np.zeros(4 * D)
        w.span_end[D] = 1.0  # the M1 block of the end features
        p_start, p_end = predict_span_boundaries(enc, *np.zeros((3, D)), w)
        assert int(np.argmax(p_start)) == k
        assert int(np.argmax(p_end)) == k

    def test_gate_is_elementwise(self, census):
        ex = census["q1"]
        enc = gen_encoder_output(ex, MockConfig(seed=9, D=D))
        w = HeadWeights.zeros(D)
        w.span_start = np.zeros(4 * D)
        w.span_start[2 * D] = 1.0  # first column of g_q2 * M2
        g = np.array([2.0, 0.0, 0.0, 0.0])
        p_start, _ = predict_span_boundaries(enc, np.zeros(D), np.zeros(D), g, w)
        logits = 2.0 * enc.M2[:, 0]
        logits[[0, ex.sep1_index, ex.sep2_index]] = -np.inf
        expected = np.exp(logits - logits.max())
        np.testing.assert_allclose(p_start, expected / expected.sum())


class TestNumbers:
    def test_gather(self, census):
        ex = census["q3"]
        enc = gen_encoder_output(ex, MockConfig(D=D))
        U = gather_numbers(enc, ex.numbers)
        assert U.shape == (6, 2 * D)
        k = ex.numbers[2].token_index
        np.testing.assert_array_equal(U[2], np.concatenate([enc.M2[k], enc.M3[k]]))
        assert gather_numbers(enc, []).shape == (0, 2 * D)

    def test_gather_out_of_range(self, census):
        ex = census["q3"]
        enc = gen_encoder_output(ex, MockConfig(D=D))
        bad = [type(ex.numbers[0])(1.0, 999, "1")]
        with pytest.raises(IndexError):
            gather_numbers(enc, bad)

    def _featured(self, ex, marks):
        fill = np.zeros((len(ex.sequence), D))
        for value, col in marks.items():
            idx = next(n.token_index for n in ex.numbers if n.value == value)
            fill[idx, col] = 5.0
        enc = enc_for(ex, fill)
        return gather_numbers(enc, ex.numbers)

    def test_sign_oracle(self, census, zero_w):
        ex = census["q3"]
        U = self._featured(ex, {218590: 0, 79667: 1})
        f = two_way_ffn(5 * D, 0, 1, 3, heads.SIGN_TO_ROW[1], heads.SIGN_TO_ROW[-1], bias=[1.0, 0, 0])
        w = with_ffn(zero_w, "sign", f)
        h = np.zeros(D)
        p = predict_signs(U, h, h, h, w)
        assert [heads.SIGN_ORDER[i] for i in p.argmax(axis=1)] == ["zero", "plus", "minus", "zero", "zero", "zero"]
        np.testing.assert_allclose(p.sum(axis=1), 1.0)

    def test_negation_oracle(self, census, zero_w):
        ex = census["q4"]
        U = self._featured(ex, {22.5: 2})
        f = two_way_ffn(5 * D, 2, 3, 2, 1, 0, bias=[1.0, 0.0])
        w = with_ffn(zero_w, "negation", f)
        h = np.zeros(D)
        p = predict_negation(U, h, h, h, w)
        assert list(p.argmax(axis=1)) == [0, 0, 0, 1, 0, 0]


class TestRerank:
    def test_zero_weights(self, zero_w):
        U = np.ones((3, 2 * D))
        h = np.zeros(D)
        assert rerank_score((1, 0, -1), U, h, h, h, zero_w) == pytest.approx(0.5)

    def test_all_zero_rejected(self, zero_w):
        with pytest.raises(ValueError):
            rerank_score((0, 0), np.ones((2, 2 * D)), np.zeros(D), np.zeros(D), np.zeros(D), zero_w)

    def test_oracle_prefers_gold(self, census, zero_w):
        ex = census["q3"]
        fill = np.zeros((len(ex.sequence), D))
        i_people = next(n.token_index for n in ex.numbers if n.value == 218590)
        fill[i_people, 0] = 5.0
        U = gather_numbers(enc_for(ex, fill), ex.numbers)
        w = zero_w
        w.expr_pool = np.zeros(2 * D)
        w.expr_pool[0] = 4.0  # attend to the row holding 218590
        w.sign_embed = np.zeros((3, 2 * D))
        w.sign_embed[heads.SIGN_TO_ROW[1], 2 * D - 2] = 1.0
        w.sign_embed[heads.SIGN_TO_ROW[-1], 2 * D - 1] = 1.0
        w = with_ffn(w, "rerank", two_way_ffn(5 * D, 2 * D - 2, 2 * D - 1, 2, 1, 0))
        h = np.zeros(D)
        gold = (0, 1, -1, 0, 0, 0)
        swapped = (0, -1, 1, 0, 0, 0)
        good, bad = rerank_score(gold, U, h, h, h, w), rerank_score(swapped, U, h, h, h, w)
        assert 0 < bad < 0.5 < good < 1

    def test_caps_signed_numbers(self):
        w = HeadWeights.random(D, seed=5)
        U = np.random.default_rng(0).normal(size=(6, 2 * D))
        h = np.zeros(D)
        full = rerank_score((1, 1, 1, 1, 1, 1), U, h, h, h, w, max_signed=4)
        assert full == pytest.approx(rerank_score((1, 1, 1, 1, 0, 0), U, h, h, h, w, max_signed=4))


def test_weight_and_encoder_roundtrip(tmp_path, census):
    w = mock_head_weights(8, seed=11)
    w.save(tmp_path / "w")
    back = HeadWeights.load(tmp_path / "w")
    for name, arr in w.tensors().items():
        np.testing.assert_allclose(back.tensors()[name], arr, rtol=1e-6, atol=1e-7)
    expected_names = {"pool_q.w", "pool_p.w", "span.start.w", "span.end.w", "num.pool.w", "expr.pool.w", "sign.embed"}
    assert expected_names <= set(back.tensors())
    assert "ffn.span_count.gamma" in back.tensors() and "beta_q1.w2" in back.tensors()

    ex = census["q1"]
    enc = gen_encoder_output(ex, MockConfig(D=8))
    enc.save(tmp_path / "enc")
    enc2 = EncoderOutput.load(tmp_path / "enc")
    np.testing.assert_allclose(enc2.M3, enc.M3, atol=1e-7)
    assert (enc2.sep1_index, enc2.sep2_index) == (enc.sep1_index, enc.sep2_index)


def test_shape_validation():
    w = HeadWeights.zeros(D)
    with pytest.raises(ValueError):
        HeadWeights(D, np.zeros(D + 1), w.pool_p, w.beta_q0, w.beta_q1, w.beta_q2, w.span_start,
                    w.span_end, w.num_pool, w.expr_pool, w.sign_embed, w.ffns)
    with pytest.raises(ValueError):
        EncoderOutput(np.zeros((5, D)), np.zeros((5, D)), np.zeros((5, D)), np.zeros((4, D)), 2, 4)
