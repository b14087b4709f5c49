"""Importance-based eviction baselines.

Each policy turns one layer of a trace into a full descending ranking of
token positions (not just a top-B set), because the compression pipeline
needs to keep consuming "next best" tokens during backfill. Ranks are
stable: equal scores keep sequence order.
"""

import dataclasses
import enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BudgetExceedsSequence,
    BudgetTooSmall,
    LayerOutOfRange,
    WindowTooLarge,
)
from .fingerprint import attention_matrix


class Policy(str, enum.Enum):
    FULL_KV = "full_kv"
    H2O = "h2o"
    WINDOW = "window"
    SNAPKV = "snapkv"
    PYRAMIDKV = "pyramidkv"


@dataclasses.dataclass(frozen=True)
class PolicyConfig:
    """Baseline knobs; only the fields for the chosen policy matter.

    ``window``/``pool_width`` drive snapkv-style observation scoring
    (pyramidkv reuses it per layer), ``sinks``/``recents`` drive the
    static window policy, ``taper`` is the pyramid's geometric decay.
    """

    policy: Policy = Policy.H2O
    window: int = 32
    pool_width: int = 5
    sinks: int = 4
    recents: int = 64
    taper: float = 0.5


@dataclasses.dataclass(frozen=True)
class ImportanceRanking:
    """Scores plus the stable descending permutation over positions."""

    policy: Policy
    scores: np.ndarray
    order: np.ndarray


def _stable_desc(scores):
    return np.lexsort((np.arange(len(scores)), -scores)).astype(np.int64)


def _check_layer(trace, layer):
    if not 0 <= layer < trace.header.num_layers:
        raise LayerOutOfRange(f"layer {layer} not in [0, {trace.header.num_layers})")


def _head_matrices(trace, layer, causal, attn):
    if attn is not None:
        return attn
    return [
        attention_matrix(trace.q(layer, h), trace.k(layer, h), causal=causal)
        for h in range(trace.header.num_heads)
    ]


def h2o_rank(trace, layer, causal=True, attn=None):
    """Cumulative received attention, summed over all rows and heads."""
    _check_layer(trace, layer)
    S = trace.header.seq_len
    scores = np.zeros(S, dtype=np.float64)
    for a in _head_matrices(trace, layer, causal, attn):
        scores += a.sum(axis=0)
    return ImportanceRanking(Policy.H2O, scores, _stable_desc(scores))


def snapkv_rank(trace, layer, window=32, pool_width=5, causal=True, attn=None):
    """Attention received from the last ``window`` query rows, max-pooled.

    Pooling is a centered 1-D max filter of odd ``pool_width`` (truncated
    at the edges), so a single spike at position p lifts its whole
    pool-width neighborhood.
    """
    _check_layer(trace, layer)
    S = trace.header.seq_len
    if window > S:
        raise WindowTooLarge(f"window {window} exceeds seq_len {S}")
    if window < 1:
        raise WindowTooLarge(f"window must be >= 1, got {window}")
    if pool_width < 1 or pool_width % 2 == 0:
        raise ValueError(f"pool_width must be odd and >= 1, got {pool_width}")

    scores = np.zeros(S, dtype=np.float64)
    for a in _head_matrices(trace, layer, causal, attn):
        scores += a[S - window :].sum(axis=0)
    if pool_width > 1:
        half = pool_width // 2
        padded = np.pad(scores, half, constant_values=-np.inf)
        scores = sliding_window_view(padded, pool_width).max(axis=1)
    return ImportanceRanking(Policy.SNAPKV, scores, _stable_desc(scores))


def window_select(seq_len, sinks, recents):
    """Static policy: keep the first ``sinks`` and last ``recents`` positions."""
    if sinks < 0 or recents < 0:
        raise BudgetExceedsSequence("sinks and recents must be >= 0")
    if sinks + recents > seq_len:
        raise BudgetExceedsSequence(
            f"sinks + recents = {sinks + recents} exceeds seq_len {seq_len}"
        )
    keep = np.zeros(seq_len, dtype=bool)
    keep[:sinks] = True
    if recents:
        keep[seq_len - recents :] = True
    return np.flatnonzero(keep).astype(np.int64)


def _window_scores(seq_len, sinks, recents):
    # Full ranking consistent with window_select: sinks first, then the
    # recent span, then the middle by recency so backfill widens the
    # recent window leftwards. Middle scores stay strictly below 2.
    scores = (np.arange(seq_len, dtype=np.float64) + 1.0) / (seq_len + 2.0)
    if recents:
        scores[seq_len - recents :] = 2.0
    scores[:sinks] = 3.0
    return scores


def pyramid_budgets(budget, num_layers, taper):
    """Per-layer token budgets decaying geometrically by ``taper``.

    Rescaled so the mean budget equals ``budget`` (total = budget *
    num_layers, largest-remainder rounding keeps the total exact), then
    floored at one token per layer.
    """
    if num_layers < 1:
        raise BudgetTooSmall(f"num_layers must be >= 1, got {num_layers}")
    if budget < 1:
        raise BudgetTooSmall(f"budget must be >= 1, got {budget}")
    if not 0.0 < taper <= 1.0:
        raise BudgetTooSmall(f"taper must be in (0, 1], got {taper}")
    total = budget * num_layers
    if total < num_layers:
        raise BudgetTooSmall(
            f"total budget {total} cannot give {num_layers} layers one token each"
        )
    weights = taper ** np.arange(num_layers, dtype=np.float64)
    exact = total * weights / weights.sum()
    out = np.floor(exact).astype(np.int64)
    short = total - out.sum()
    order = np.lexsort((np.arange(num_layers), -(exact - out)))
    out[order[:short]] += 1

    # Geometric decay can starve deep layers; shift tokens from the
    # richest layers until everyone has at least one.
    while (out < 1).any():
        donor = int(out.argmax())
        taker = int((out < 1).argmax())
        out[donor] -= 1
        out[taker] += 1
    return out


def rank_tokens(trace, layer, config, causal=True, attn=None):
    """Dispatch to the configured policy's full ranking for one layer.

    FULL_KV ranks uniformly (stable sort keeps natural order), WINDOW
    synthesizes scores matching window_select plus a recency-ordered
    middle, and PYRAMIDKV scores like snapkv (its pyramid part is the
    per-layer budget schedule, applied by the caller). Unlike a direct
    snapkv_rank call, the dispatcher clamps the observation window to the
    sequence so one config can sweep traces of different lengths.
    """
    _check_layer(trace, layer)
    S = trace.header.seq_len
    policy = Policy(config.policy)
    if policy is Policy.FULL_KV:
        scores = np.ones(S, dtype=np.float64)
        return ImportanceRanking(policy, scores, _stable_desc(scores))
    if policy is Policy.H2O:
        return h2o_rank(trace, layer, causal=causal, attn=attn)
    if policy is Policy.WINDOW:
        if config.sinks + config.recents > S:
            raise BudgetExceedsSequence(
                f"sinks + recents = {config.sinks + config.recents} exceeds seq_len {S}"
            )
        scores = _window_scores(S, config.sinks, config.recents)
        return ImportanceRanking(policy, scores, _stable_desc(scores))
    if policy in (Policy.SNAPKV, Policy.PYRAMIDKV):
        r = snapkv_rank(
            trace,
            layer,
            window=min(config.window, S),
            pool_width=config.pool_width,
            causal=causal,
            attn=attn,
        )
        return ImportanceRanking(policy, r.scores, r.order)
    raise ValueError(f"unknown policy {config.policy!r}")
