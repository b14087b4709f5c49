"""Binary per-token fingerprints derived from replayed attention.

For one layer, each head's attention matrix is recomputed from the traced
Q/K, every token gets a received-attention score per head, and the score
is thresholded so that exactly the top ceil(retain_fraction * seq_len)
tokens of each head carry a 1 bit. A token's fingerprint is its bit row
across heads: a compact signature of which heads consider it worth
keeping.
"""

import dataclasses
import math

import numpy as np

from .errors import InvalidFraction, LayerOutOfRange, NonFiniteValue, ShapeMismatch


def attention_matrix(q, k, causal=True):
    """Replay softmax attention for one head.

    Takes (seq_len, head_dim) float query/key blocks, returns the
    (seq_len, seq_len) row-stochastic attention matrix in float64. With
    ``causal`` the upper triangle is exactly zero (masked before the
    softmax, so no probability ever leaks above the diagonal) and every
    row still sums to 1 within 1e-5.
    """
    q = np.asarray(q)
    k = np.asarray(k)
    if q.ndim != 2 or k.ndim != 2:
        raise ShapeMismatch(f"expected 2-D q and k, got {q.shape} and {k.shape}")
    if q.shape != k.shape:
        raise ShapeMismatch(f"q shape {q.shape} does not match k shape {k.shape}")
    if not (np.isfinite(q).all() and np.isfinite(k).all()):
        raise NonFiniteValue("q or k contains NaN or infinity")

    d = q.shape[1]
    logits = (q.astype(np.float64) @ k.astype(np.float64).T) / math.sqrt(d)
    if causal:
        s = logits.shape[0]
        logits[np.triu_indices(s, k=1)] = -np.inf
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits


def head_scores(attn):
    """Mean attention received per token: column means of one head's matrix."""
    attn = np.asarray(attn)
    if attn.ndim != 2 or attn.shape[0] != attn.shape[1]:
        raise ShapeMismatch(f"attention matrix must be square, got {attn.shape}")
    return attn.mean(axis=0)


@dataclasses.dataclass(frozen=True)
class Fingerprint:
    """One token's bit row: bits[h] = 1 iff head h keeps this token."""

    token_index: int
    bits: np.ndarray


class FingerprintSet:
    """Fingerprints for every token of one layer.

    ``bits`` is the (seq_len, num_heads) uint8 matrix; indexing yields
    per-token Fingerprint views. ``scores`` holds the (num_heads, seq_len)
    received-attention means and ``thresholds`` the per-head cut score
    (the score of the last token that made the cut, i.e. the empirical
    (1 - retain_fraction) quantile under stable ranking).
    """

    def __init__(self, bits, scores=None, thresholds=None, bits_per_head=None):
        self.bits = np.ascontiguousarray(bits, dtype=np.uint8)
        self.scores = scores
        self.thresholds = thresholds
        self.bits_per_head = bits_per_head

    @property
    def width(self):
        return self.bits.shape[1]

    def __len__(self):
        return self.bits.shape[0]

    def __getitem__(self, i):
        return Fingerprint(token_index=i, bits=self.bits[i])


def compute_fingerprints(trace, layer, retain_fraction, causal=True, attn=None):
    """Fingerprint every token of ``layer``.

    ``retain_fraction`` in (0, 1] sets how many tokens each head marks:
    exactly ceil(retain_fraction * seq_len), ties broken toward the
    earlier token. Pass ``attn`` (per-head attention matrices, as from
    attention_matrix) to skip the replay when the caller already has them.
    """
    if not 0.0 < retain_fraction <= 1.0:
        raise InvalidFraction(
            f"retain_fraction must be in (0, 1], got {retain_fraction}"
        )
    h = trace.header
    if not 0 <= layer < h.num_layers:
        raise LayerOutOfRange(f"layer {layer} not in [0, {h.num_layers})")

    S, H = h.seq_len, h.num_heads
    n_bits = min(S, math.ceil(retain_fraction * S - 1e-9))
    bits = np.zeros((S, H), dtype=np.uint8)
    scores = np.empty((H, S), dtype=np.float64)
    thresholds = np.empty(H, dtype=np.float64)
    idx = np.arange(S)
    for head in range(H):
        a = attn[head] if attn is not None else attention_matrix(
            trace.q(layer, head), trace.k(layer, head), causal=causal
        )
        w = head_scores(a)
        order = np.lexsort((idx, -w))
        bits[order[:n_bits], head] = 1
        thresholds[head] = w[order[n_bits - 1]]
        scores[head] = w
    return FingerprintSet(bits, scores, thresholds, n_bits)
