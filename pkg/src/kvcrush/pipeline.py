"""Budgeted cache selection: baseline importance plus grouped representatives.

A budget B for one layer splits into B_imp tokens the baseline ranks
highest and B_rep = round(kvcrush_fraction * B) representatives elected
from the *evicted* remainder by fingerprint grouping, so the kept set
contains both the obviously important tokens and proxies for the regions
the baseline threw away. Missing representatives (empty buckets) are
backfilled from the baseline's next-best tokens. The retained set is
always exactly min(B, seq_len) positions with disjoint provenance tags.

Chunk and page granularity select whole fixed-size blocks of tokens:
block importance is the sum of member token scores, block fingerprints
are member fingerprints concatenated in token order (the short final
block zero-padded), and the token-level remainder of the budget is
backfilled token-wise. A block size of 1 reproduces token mode exactly.
"""

import dataclasses
import enum
import json
import math
import time

import numpy as np

from . import baselines
from .baselines import Policy, PolicyConfig
from .errors import (
    EmptyPage,
    InvalidFraction,
    InvalidPartition,
    InvalidSpec,
    LayerOutOfRange,
)
from .fingerprint import Fingerprint, compute_fingerprints
from .grouping import AnchorStrategy, kvcrush_group


class Granularity(str, enum.Enum):
    TOKEN = "token"
    CHUNK = "chunk"
    PAGE = "page"


class Provenance(str, enum.Enum):
    IMPORTANT = "important"
    REPRESENTATIVE = "representative"
    BACKFILL = "backfill"


@dataclasses.dataclass(frozen=True)
class BudgetSpec:
    """How many tokens to keep and how to spend them.

    ``total`` is the per-layer token budget (pyramid policies reinterpret
    it as the mean of their schedule). ``kvcrush_fraction`` is the share
    handed to representative grouping; 0 reduces to the pure baseline.
    ``block_size`` only matters for chunk/page granularity.
    """

    total: int
    kvcrush_fraction: float = 0.25
    granularity: Granularity = Granularity.TOKEN
    block_size: int = 1

    def validate(self):
        if self.total < 1:
            raise InvalidSpec(f"budget total must be >= 1, got {self.total}")
        if not 0.0 <= self.kvcrush_fraction <= 1.0:
            raise InvalidFraction(
                f"kvcrush_fraction must be in [0, 1], got {self.kvcrush_fraction}"
            )
        if self.block_size < 1:
            raise InvalidSpec(f"block_size must be >= 1, got {self.block_size}")

    def effective_block_size(self):
        return 1 if Granularity(self.granularity) is Granularity.TOKEN else self.block_size


@dataclasses.dataclass
class LayerDecision:
    layer: int
    retained: np.ndarray
    provenance: list
    target_budget: int
    compression_ratio: float
    phase_ns: dict
    distance_ops: int


@dataclasses.dataclass
class EvictionDecision:
    """All-layer selection result, serializable for the eval stage."""

    seq_len: int
    layers: list
    config: dict

    def layer(self, i):
        return self.layers[i]

    def to_json(self):
        # phase_ns is wall-clock noise and deliberately not serialized:
        # decision files must be byte-identical for identical flags+seed.
        return json.dumps(
            {
                "seq_len": self.seq_len,
                "config": self.config,
                "layers": [
                    {
                        "layer": d.layer,
                        "retained": [
                            {"index": int(i), "provenance": p.value}
                            for i, p in zip(d.retained, d.provenance)
                        ],
                        "target_budget": d.target_budget,
                        "compression_ratio": d.compression_ratio,
                        "distance_ops": d.distance_ops,
                    }
                    for d in self.layers
                ],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        layers = []
        for entry in raw["layers"]:
            idx = np.asarray([r["index"] for r in entry["retained"]], dtype=np.int64)
            prov = [Provenance(r["provenance"]) for r in entry["retained"]]
            layers.append(
                LayerDecision(
                    layer=entry["layer"],
                    retained=idx,
                    provenance=prov,
                    target_budget=entry["target_budget"],
                    compression_ratio=entry["compression_ratio"],
                    phase_ns=entry.get("phase_ns", {}),
                    distance_ops=entry.get("distance_ops", 0),
                )
            )
        return cls(seq_len=raw["seq_len"], layers=layers, config=raw.get("config", {}))


def _split_budget(total, fraction):
    """Representative share rounds half away from zero; the rest is important."""
    n_rep = int(math.floor(fraction * total + 0.5))
    return total - n_rep, n_rep


def page_fingerprint(fingerprints, page_size=None, index=0):
    """Concatenate member fingerprints into one page-level fingerprint.

    Order follows the list (token order); when the page is short of
    ``page_size`` members the tail is zero-padded so every page in a
    layer has equal width. ``index`` tags the result (page id).
    """
    rows = [fp.bits if isinstance(fp, Fingerprint) else np.asarray(fp) for fp in fingerprints]
    if not rows:
        raise EmptyPage("a page must contain at least one fingerprint")
    width = len(rows[0])
    if page_size is not None and len(rows) > page_size:
        raise InvalidPartition(
            f"page holds {len(rows)} fingerprints, page_size is {page_size}"
        )
    bits = np.concatenate([np.ascontiguousarray(r != 0, dtype=np.uint8) for r in rows])
    if page_size is not None and len(rows) < page_size:
        bits = np.concatenate(
            [bits, np.zeros((page_size - len(rows)) * width, dtype=np.uint8)]
        )
    return Fingerprint(token_index=index, bits=bits)


def page_ranges(seq_len, page_size):
    """The canonical page partition: [0,p), [p,2p), ..., final page short."""
    if page_size < 1:
        raise InvalidSpec(f"page_size must be >= 1, got {page_size}")
    return [(lo, min(seq_len, lo + page_size)) for lo in range(0, seq_len, page_size)]


def page_importance(attn, pages):
    """Total attention received by each page, summed over heads and rows.

    ``attn`` is an iterable of per-head (S, S) attention matrices and
    ``pages`` a list of (start, stop) ranges that must partition [0, S).
    """
    mats = list(attn)
    if not mats:
        raise EmptyPage("page_importance needs at least one attention matrix")
    S = mats[0].shape[0]
    cursor = 0
    for lo, hi in pages:
        if lo != cursor or hi <= lo:
            raise InvalidPartition(f"page ({lo}, {hi}) breaks the partition at {cursor}")
        cursor = hi
    if cursor != S:
        raise InvalidPartition(f"pages cover [0, {cursor}), sequence is [0, {S})")

    col_mass = np.zeros(S, dtype=np.float64)
    for a in mats:
        col_mass += a.sum(axis=0)
    return np.asarray([col_mass[lo:hi].sum() for lo, hi in pages])


def _block_fingerprints(bits, block_ids, size, seq_len):
    """Stack page fingerprints for the given block ids, zero-padded."""
    width = bits.shape[1]
    out = np.zeros((len(block_ids), size * width), dtype=np.uint8)
    for row, b in enumerate(block_ids):
        lo = b * size
        hi = min(seq_len, lo + size)
        flat = bits[lo:hi].reshape(-1)
        out[row, : flat.size] = flat
    return out


def kvcrush_select(
    trace,
    layer,
    budget,
    policy=None,
    retain_fraction=0.5,
    anchor=AnchorStrategy.RANDOM,
    rng_seed=0,
    causal=True,
    attn=None,
):
    """Select the retained token set for one layer.

    ``budget.total`` is interpreted per layer (PYRAMIDKV maps it through
    its taper schedule first). ``retain_fraction`` controls fingerprint
    density, ``anchor``/``rng_seed`` the grouping pass. ``attn`` may carry
    precomputed per-head attention matrices; otherwise each scoring pass
    replays them head by head.
    """
    budget.validate()
    policy = policy or PolicyConfig()
    h = trace.header
    if not 0 <= layer < h.num_layers:
        raise LayerOutOfRange(f"layer {layer} not in [0, {h.num_layers})")
    S = h.seq_len

    if Policy(policy.policy) is Policy.PYRAMIDKV:
        schedule = baselines.pyramid_budgets(budget.total, h.num_layers, policy.taper)
        layer_budget = int(schedule[layer])
    else:
        layer_budget = budget.total
    b_total = min(layer_budget, S)
    size = budget.effective_block_size()

    phase_ns = {}
    t0 = time.perf_counter_ns()
    ranking = baselines.rank_tokens(trace, layer, policy, causal=causal, attn=attn)
    phase_ns["scoring"] = time.perf_counter_ns() - t0

    if size == 1:
        n_slots = b_total
        slot_scores = ranking.scores
        slot_order = ranking.order
    else:
        n_blocks = (S + size - 1) // size
        n_slots = b_total // size
        starts = np.arange(0, S, size)
        slot_scores = np.add.reduceat(ranking.scores, starts)
        slot_order = np.lexsort((np.arange(n_blocks), -slot_scores))

    n_imp_slots, n_rep_slots = _split_budget(n_slots, budget.kvcrush_fraction)

    important_slots = slot_order[:n_imp_slots]
    retained_mask = np.zeros(S, dtype=bool)
    prov = np.zeros(S, dtype=np.uint8)  # 1 important, 2 representative, 3 backfill
    if size == 1:
        retained_mask[important_slots] = True
    else:
        for b in important_slots:
            retained_mask[b * size : min(S, (b + 1) * size)] = True
    prov[retained_mask] = 1

    distance_ops = 0
    t0 = time.perf_counter_ns()
    fps = None
    if n_rep_slots > 0:
        fps = compute_fingerprints(trace, layer, retain_fraction, causal=causal, attn=attn)
    phase_ns["fingerprint"] = time.perf_counter_ns() - t0

    t0 = time.perf_counter_ns()
    if n_rep_slots > 0:
        if size == 1:
            remainder = np.flatnonzero(~retained_mask)
            if remainder.size:
                reps = kvcrush_group(
                    fps.bits[remainder], n_rep_slots, strategy=anchor, rng_seed=rng_seed
                )
                chosen = remainder[reps.indices]
                retained_mask[chosen] = True
                prov[chosen] = 2
                distance_ops += reps.distance_ops
        else:
            rem_blocks = np.setdiff1d(np.arange(n_blocks), important_slots)
            if rem_blocks.size:
                block_fps = _block_fingerprints(fps.bits, rem_blocks, size, S)
                reps = kvcrush_group(
                    block_fps, n_rep_slots, strategy=anchor, rng_seed=rng_seed
                )
                distance_ops += reps.distance_ops
                for b in rem_blocks[reps.indices]:
                    span = slice(b * size, min(S, (b + 1) * size))
                    retained_mask[span] = True
                    prov[span] = 2
    phase_ns["grouping"] = time.perf_counter_ns() - t0

    t0 = time.perf_counter_ns()
    shortfall = b_total - int(retained_mask.sum())
    if shortfall > 0:
        candidates = ranking.order[~retained_mask[ranking.order]]
        fill = candidates[:shortfall]
        retained_mask[fill] = True
        prov[fill] = 3
    retained = np.flatnonzero(retained_mask).astype(np.int64)
    phase_ns["merge"] = time.perf_counter_ns() - t0

    tags = {1: Provenance.IMPORTANT, 2: Provenance.REPRESENTATIVE, 3: Provenance.BACKFILL}
    return LayerDecision(
        layer=layer,
        retained=retained,
        provenance=[tags[p] for p in prov[retained]],
        target_budget=b_total,
        compression_ratio=S / len(retained),
        phase_ns=phase_ns,
        distance_ops=distance_ops,
    )


def chunked_select(
    trace,
    layer,
    budget_tokens,
    chunk_size,
    policy=None,
    kvcrush_fraction=0.25,
    retain_fraction=0.5,
    anchor=AnchorStrategy.RANDOM,
    rng_seed=0,
    causal=True,
    attn=None,
):
    """Token budget spent on whole chunks, remainder backfilled token-wise."""
    spec = BudgetSpec(
        total=budget_tokens,
        kvcrush_fraction=kvcrush_fraction,
        granularity=Granularity.CHUNK,
        block_size=chunk_size,
    )
    return kvcrush_select(
        trace,
        layer,
        spec,
        policy=policy,
        retain_fraction=retain_fraction,
        anchor=anchor,
        rng_seed=rng_seed,
        causal=causal,
        attn=attn,
    )


def select_all(
    trace,
    budget,
    policy=None,
    retain_fraction=0.5,
    anchor=AnchorStrategy.RANDOM,
    rng_seed=0,
    causal=True,
):
    """Run kvcrush_select on every layer and bundle the decisions."""
    policy = policy or PolicyConfig()
    layers = [
        kvcrush_select(
            trace,
            lay,
            budget,
            policy=policy,
            retain_fraction=retain_fraction,
            anchor=anchor,
            rng_seed=rng_seed,
            causal=causal,
        )
        for lay in range(trace.header.num_layers)
    ]
    config = {
        "policy": Policy(policy.policy).value,
        "budget": budget.total,
        "kvcrush_fraction": budget.kvcrush_fraction,
        "granularity": Granularity(budget.granularity).value,
        "block_size": budget.effective_block_size(),
        "retain_fraction": retain_fraction,
        "anchor": AnchorStrategy(anchor).value,
        "rng_seed": rng_seed,
    }
    return EvictionDecision(seq_len=trace.header.seq_len, layers=layers, config=config)
