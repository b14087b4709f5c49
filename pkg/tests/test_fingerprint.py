"""Attention replay and fingerprint thresholding."""

import math

import numpy as np
import pytest

from kvcrush import errors
from kvcrush.fingerprint import (
    attention_matrix,
    compute_fingerprints,
    head_scores,
)
from kvcrush.trace import SyntheticSpec, gen_synthetic


def scalar_softmax_row(logits):
    """Independent scalar oracle: no numpy, no broadcasting."""
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    s = sum(exps)
    return [e / s for e in exps]


class TestAttentionMatrix:
    def test_single_token(self):
        a = attention_matrix(np.array([[2.0, 1.0]]), np.array([[0.5, 3.0]]))
        assert a.shape == (1, 1)
        assert a[0, 0] == 1.0

    def test_identity_hand_example(self):
        # Q = K = I, d = 2, causal. Row 1 logits are [0, 1/sqrt(2)];
        # frozen oracle values from the scalar implementation below.
        eye = np.eye(2, dtype=np.float32)
        a = attention_matrix(eye, eye, causal=True)
        assert np.allclose(a[0], [1.0, 0.0])
        expected = scalar_softmax_row([0.0, 1.0 / math.sqrt(2.0)])
        assert abs(expected[0] - 0.330238451) < 1e-9
        assert abs(expected[1] - 0.669761549) < 1e-9
        assert np.allclose(a[1], expected, atol=1e-4)

    def test_rows_stochastic_random(self, rng):
        q = rng.standard_normal((37, 8))
        k = rng.standard_normal((37, 8))
        for causal in (True, False):
            a = attention_matrix(q, k, causal=causal)
            assert np.allclose(a.sum(axis=1), 1.0, atol=1e-5)
            assert (a >= 0).all()

    def test_causal_upper_triangle_exactly_zero(self, rng):
        q = rng.standard_normal((20, 4))
        k = rng.standard_normal((20, 4))
        a = attention_matrix(q, k, causal=True)
        assert (a[np.triu_indices(20, k=1)] == 0.0).all()

    def test_shape_mismatch(self):
        with pytest.raises(errors.ShapeMismatch):
            attention_matrix(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_non_finite_rejected(self):
        q = np.zeros((2, 2))
        q[0, 0] = np.inf
        with pytest.raises(errors.NonFiniteValue):
            attention_matrix(q, np.zeros((2, 2)))


class TestHeadScores:
    def test_hand_example(self):
        # Causal S=2 matrix from the identity example, column means.
        a = np.array([[1.0, 0.0], [0.330238451, 0.669761549]])
        w = head_scores(a)
        assert np.allclose(w, [0.665119225, 0.334880775], atol=1e-9)

    def test_uniform_attention(self):
        a = np.full((5, 5), 0.2)
        assert np.allclose(head_scores(a), 0.2)

    def test_scores_sum_to_one_for_row_stochastic(self, rng):
        logits = rng.standard_normal((9, 9))
        a = np.exp(logits)
        a /= a.sum(axis=1, keepdims=True)
        assert abs(head_scores(a).sum() - 1.0) < 1e-12

    def test_rejects_non_square(self):
        with pytest.raises(errors.ShapeMismatch):
            head_scores(np.zeros((3, 4)))


def trace_for(scores_matrix):
    """Tiny 1-layer trace whose dims fit a given (H, S) score table."""
    H, S = scores_matrix.shape
    return gen_synthetic(
        SyntheticSpec(seq_len=S, num_layers=1, num_heads=H, head_dim=4,
                      num_clusters=1, rng_seed=0)
    )


def attn_with_col_means(w):
    """Any matrix whose column means equal w: one row of S*w, rest zero."""
    S = len(w)
    a = np.zeros((S, S))
    a[0] = np.asarray(w) * S
    return a


class TestComputeFingerprints:
    def test_enumerated_quantile(self):
        w = [0.4, 0.3, 0.2, 0.1]
        t = trace_for(np.zeros((1, 4)))
        fps = compute_fingerprints(t, 0, 0.5, attn=[attn_with_col_means(w)])
        assert fps.bits[:, 0].tolist() == [1, 1, 0, 0]
        assert fps.thresholds[0] == pytest.approx(0.3)

    def test_exact_bit_count_per_head(self, small_trace):
        for frac in (0.1, 0.25, 0.5, 0.9, 1.0):
            fps = compute_fingerprints(small_trace, 0, frac)
            want = math.ceil(frac * 64)
            assert (fps.bits.sum(axis=0) == want).all()

    def test_retain_fraction_one_all_ones(self, small_trace):
        fps = compute_fingerprints(small_trace, 1, 1.0)
        assert (fps.bits == 1).all()

    def test_ties_prefer_earlier_token(self):
        w = [0.5, 0.25, 0.25]
        t = trace_for(np.zeros((1, 3)))
        fps = compute_fingerprints(t, 0, 2 / 3, attn=[attn_with_col_means(w)])
        assert fps.bits[:, 0].tolist() == [1, 1, 0]

    def test_identical_heads_identical_columns(self):
        w = [0.1, 0.5, 0.4]
        a = attn_with_col_means(w)
        t = trace_for(np.zeros((2, 3)))
        fps = compute_fingerprints(t, 0, 0.5, attn=[a, a.copy()])
        assert np.array_equal(fps.bits[:, 0], fps.bits[:, 1])

    def test_permuting_scores_permutes_bits(self, rng):
        # With distinct scores, fingerprints depend on scores only through
        # rank order per head.
        w = rng.permutation(np.linspace(0.1, 0.9, 8))
        perm = rng.permutation(8)
        t = trace_for(np.zeros((1, 8)))
        fps = compute_fingerprints(t, 0, 0.4, attn=[attn_with_col_means(w)])
        fps_p = compute_fingerprints(t, 0, 0.4, attn=[attn_with_col_means(w[perm])])
        assert np.array_equal(fps.bits[perm, 0], fps_p.bits[:, 0])

    def test_deterministic(self, small_trace):
        a = compute_fingerprints(small_trace, 0, 0.3)
        b = compute_fingerprints(small_trace, 0, 0.3)
        assert np.array_equal(a.bits, b.bits)
        assert np.array_equal(a.thresholds, b.thresholds)

    def test_precomputed_attention_matches_replay(self, small_trace):
        attn = [
            attention_matrix(small_trace.q(0, h), small_trace.k(0, h))
            for h in range(4)
        ]
        direct = compute_fingerprints(small_trace, 0, 0.25)
        cached = compute_fingerprints(small_trace, 0, 0.25, attn=attn)
        assert np.array_equal(direct.bits, cached.bits)

    def test_invalid_fraction(self, small_trace):
        for bad in (0.0, -0.1, 1.0001):
            with pytest.raises(errors.InvalidFraction):
                compute_fingerprints(small_trace, 0, bad)

    def test_layer_out_of_range(self, small_trace):
        with pytest.raises(errors.LayerOutOfRange):
            compute_fingerprints(small_trace, 2, 0.5)

    def test_fingerprint_set_indexing(self, small_trace):
        fps = compute_fingerprints(small_trace, 0, 0.5)
        assert len(fps) == 64
        fp = fps[3]
        assert fp.token_index == 3
        assert np.array_equal(fp.bits, fps.bits[3])
