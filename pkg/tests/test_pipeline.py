"""Budgeted selection: splits, granularity, provenance, serialization."""

import numpy as np
import pytest

from kvcrush import errors
from kvcrush.baselines import Policy, PolicyConfig, rank_tokens
from kvcrush.fingerprint import Fingerprint
from kvcrush.pipeline import (
    BudgetSpec,
    EvictionDecision,
    Granularity,
    Provenance,
    _split_budget,
    chunked_select,
    kvcrush_select,
    page_fingerprint,
    page_importance,
    page_ranges,
    select_all,
)


class TestSplitBudget:
    def test_quarter_of_2048(self):
        assert _split_budget(2048, 0.25) == (1536, 512)

    def test_rounds_half_up(self):
        assert _split_budget(10, 0.25) == (7, 3)  # 2.5 -> 3
        assert _split_budget(5, 0.5) == (2, 3)  # 2.5 -> 3

    def test_extremes(self):
        assert _split_budget(16, 0.0) == (16, 0)
        assert _split_budget(16, 1.0) == (0, 16)


class TestBudgetSpec:
    def test_validate_rejects_bad_values(self):
        with pytest.raises(errors.InvalidSpec):
            BudgetSpec(total=0).validate()
        with pytest.raises(errors.InvalidFraction):
            BudgetSpec(total=8, kvcrush_fraction=1.5).validate()
        with pytest.raises(errors.InvalidSpec):
            BudgetSpec(total=8, block_size=0).validate()

    def test_token_mode_ignores_block_size(self):
        spec = BudgetSpec(total=8, granularity=Granularity.TOKEN, block_size=16)
        assert spec.effective_block_size() == 1
        spec = BudgetSpec(total=8, granularity=Granularity.PAGE, block_size=16)
        assert spec.effective_block_size() == 16


class TestTokenSelection:
    def test_budget_exact_and_provenance_disjoint(self, small_trace):
        d = kvcrush_select(small_trace, 0, BudgetSpec(total=16, kvcrush_fraction=0.25))
        assert len(d.retained) == 16
        assert len(set(d.retained.tolist())) == 16
        assert len(d.provenance) == 16
        assert d.target_budget == 16
        assert d.compression_ratio == 64 / 16

    def test_split_shares_visible_in_tags(self, small_trace):
        d = kvcrush_select(small_trace, 0, BudgetSpec(total=16, kvcrush_fraction=0.25))
        counts = {p: 0 for p in Provenance}
        for p in d.provenance:
            counts[p] += 1
        assert counts[Provenance.IMPORTANT] == 12
        assert counts[Provenance.REPRESENTATIVE] <= 4
        assert sum(counts.values()) == 16

    def test_fraction_zero_is_pure_baseline(self, small_trace):
        cfg = PolicyConfig(policy=Policy.H2O)
        d = kvcrush_select(small_trace, 0, BudgetSpec(total=20, kvcrush_fraction=0.0),
                           policy=cfg)
        top = rank_tokens(small_trace, 0, cfg).order[:20]
        assert sorted(d.retained.tolist()) == sorted(top.tolist())
        assert all(p is Provenance.IMPORTANT for p in d.provenance)
        assert d.distance_ops == 0

    def test_budget_at_or_over_seq_len_keeps_everything(self, small_trace):
        for total in (64, 65, 1000):
            d = kvcrush_select(small_trace, 0, BudgetSpec(total=total))
            assert d.retained.tolist() == list(range(64))
            assert d.target_budget == 64

    def test_important_are_baseline_top(self, small_trace):
        cfg = PolicyConfig(policy=Policy.H2O)
        d = kvcrush_select(small_trace, 0, BudgetSpec(total=16, kvcrush_fraction=0.25),
                           policy=cfg)
        top12 = set(rank_tokens(small_trace, 0, cfg).order[:12].tolist())
        got = {int(i) for i, p in zip(d.retained, d.provenance)
               if p is Provenance.IMPORTANT}
        assert got == top12

    def test_representatives_come_from_evicted_set(self, small_trace):
        cfg = PolicyConfig(policy=Policy.H2O)
        d = kvcrush_select(small_trace, 0, BudgetSpec(total=16, kvcrush_fraction=0.5),
                           policy=cfg)
        top8 = set(rank_tokens(small_trace, 0, cfg).order[:8].tolist())
        reps = {int(i) for i, p in zip(d.retained, d.provenance)
                if p is Provenance.REPRESENTATIVE}
        assert reps.isdisjoint(top8)

    def test_distance_ops_linear_in_remainder(self, small_trace):
        d = kvcrush_select(small_trace, 0, BudgetSpec(total=16, kvcrush_fraction=0.25))
        # 12 important, 52 evicted candidates, two passes over each.
        assert d.distance_ops == 2 * 52

    def test_deterministic_for_same_seed(self, small_trace):
        a = kvcrush_select(small_trace, 0, BudgetSpec(total=16), rng_seed=7)
        b = kvcrush_select(small_trace, 0, BudgetSpec(total=16), rng_seed=7)
        assert np.array_equal(a.retained, b.retained)
        assert a.provenance == b.provenance

    def test_phase_timings_cover_all_stages(self, small_trace):
        d = kvcrush_select(small_trace, 0, BudgetSpec(total=16))
        assert set(d.phase_ns) == {"scoring", "fingerprint", "grouping", "merge"}

    def test_attn_replay_matches(self, small_trace):
        from kvcrush.fingerprint import attention_matrix

        attn = [attention_matrix(small_trace.q(0, h), small_trace.k(0, h))
                for h in range(4)]
        a = kvcrush_select(small_trace, 0, BudgetSpec(total=16), rng_seed=3)
        b = kvcrush_select(small_trace, 0, BudgetSpec(total=16), rng_seed=3, attn=attn)
        assert np.array_equal(a.retained, b.retained)


class TestBlockSelection:
    def test_chunks_fill_whole_blocks(self, small_trace):
        d = chunked_select(small_trace, 0, budget_tokens=32, chunk_size=8)
        assert len(d.retained) == 32
        blocks = {int(i) // 8 for i in d.retained}
        assert len(blocks) == 4  # 32 tokens / 8 per block, no partial blocks
        for b in blocks:
            members = [int(i) for i in d.retained if int(i) // 8 == b]
            assert members == list(range(b * 8, b * 8 + 8))

    def test_chunk_size_one_equals_token_mode(self, small_trace):
        tok = kvcrush_select(small_trace, 0,
                             BudgetSpec(total=16, kvcrush_fraction=0.25), rng_seed=5)
        chk = chunked_select(small_trace, 0, budget_tokens=16, chunk_size=1,
                             kvcrush_fraction=0.25, rng_seed=5)
        assert np.array_equal(tok.retained, chk.retained)
        assert tok.provenance == chk.provenance

    def test_uneven_budget_backfills_tokenwise(self, small_trace):
        # 20 tokens over size-8 blocks: 2 whole blocks + 4 loose tokens.
        d = chunked_select(small_trace, 0, budget_tokens=20, chunk_size=8)
        assert len(d.retained) == 20
        backfills = [p for p in d.provenance if p is Provenance.BACKFILL]
        assert len(backfills) >= 4

    def test_page_granularity_matches_chunk(self, small_trace):
        spec = BudgetSpec(total=32, kvcrush_fraction=0.25,
                          granularity=Granularity.PAGE, block_size=8)
        pg = kvcrush_select(small_trace, 0, spec, rng_seed=2)
        ck = chunked_select(small_trace, 0, budget_tokens=32, chunk_size=8,
                            kvcrush_fraction=0.25, rng_seed=2)
        assert np.array_equal(pg.retained, ck.retained)


class TestPaging:
    def test_page_ranges_partition(self):
        assert page_ranges(10, 4) == [(0, 4), (4, 8), (8, 10)]
        assert page_ranges(8, 8) == [(0, 8)]

    def test_page_fingerprint_concatenates_in_order(self):
        fps = [Fingerprint(0, np.array([1, 0], dtype=np.uint8)),
               Fingerprint(1, np.array([0, 1], dtype=np.uint8))]
        pf = page_fingerprint(fps, page_size=2, index=0)
        assert pf.bits.tolist() == [1, 0, 0, 1]

    def test_short_page_zero_padded(self):
        fps = [Fingerprint(0, np.array([1, 1], dtype=np.uint8))]
        pf = page_fingerprint(fps, page_size=3)
        assert pf.bits.tolist() == [1, 1, 0, 0, 0, 0]

    def test_page_fingerprint_errors(self):
        with pytest.raises(errors.EmptyPage):
            page_fingerprint([])
        fps = [Fingerprint(i, np.zeros(2, dtype=np.uint8)) for i in range(3)]
        with pytest.raises(errors.InvalidPartition):
            page_fingerprint(fps, page_size=2)

    def test_page_importance_single_page_is_row_count(self):
        # Each softmax row carries unit mass, so one page over one head
        # collects exactly S.
        S = 6
        a = np.full((S, S), 1.0 / S)
        got = page_importance([a], [(0, S)])
        assert got.shape == (1,)
        assert got[0] == pytest.approx(S)

    def test_page_importance_splits_mass(self):
        S = 4
        a = np.eye(S)
        got = page_importance([a, a], page_ranges(S, 2))
        assert got.tolist() == [4.0, 4.0]

    def test_page_importance_rejects_bad_partition(self):
        a = np.eye(4)
        with pytest.raises(errors.InvalidPartition):
            page_importance([a], [(0, 2), (3, 4)])
        with pytest.raises(errors.InvalidPartition):
            page_importance([a], [(0, 2)])
        with pytest.raises(errors.EmptyPage):
            page_importance([], [(0, 4)])


class TestPyramidSchedule:
    def test_per_layer_budgets_follow_taper(self, small_trace):
        cfg = PolicyConfig(policy=Policy.PYRAMIDKV, window=16)
        dec = select_all(small_trace, BudgetSpec(total=20, kvcrush_fraction=0.0),
                         policy=cfg)
        # pyramid_budgets(20, 2, 0.5) -> [27, 13]
        assert [d.target_budget for d in dec.layers] == [27, 13]
        assert [len(d.retained) for d in dec.layers] == [27, 13]


class TestDecisionSerialization:
    def test_round_trip(self, small_trace):
        dec = select_all(small_trace, BudgetSpec(total=16), rng_seed=9)
        back = EvictionDecision.from_json(dec.to_json())
        assert back.seq_len == dec.seq_len
        assert back.config == dec.config
        for a, b in zip(dec.layers, back.layers):
            assert np.array_equal(a.retained, b.retained)
            assert a.provenance == b.provenance
            assert a.target_budget == b.target_budget
            assert a.distance_ops == b.distance_ops

    def test_bytes_stable_across_runs(self, small_trace):
        a = select_all(small_trace, BudgetSpec(total=16), rng_seed=9).to_json()
        b = select_all(small_trace, BudgetSpec(total=16), rng_seed=9).to_json()
        assert a == b

    def test_select_all_covers_layers(self, small_trace):
        dec = select_all(small_trace, BudgetSpec(total=16))
        assert [d.layer for d in dec.layers] == [0, 1]
        assert dec.config["policy"] == "h2o"
        assert dec.config["budget"] == 16


class TestSelectErrors:
    def test_layer_out_of_range(self, small_trace):
        with pytest.raises(errors.LayerOutOfRange):
            kvcrush_select(small_trace, 2, BudgetSpec(total=8))

    def test_invalid_budget(self, small_trace):
        with pytest.raises(errors.InvalidSpec):
            kvcrush_select(small_trace, 0, BudgetSpec(total=0))

    def test_invalid_fraction(self, small_trace):
        with pytest.raises(errors.InvalidFraction):
            kvcrush_select(small_trace, 0, BudgetSpec(total=8, kvcrush_fraction=-0.1))
