import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cachecast.cachesim import (CacheMetrics, LfuCache, LruCache, Predictions, hit_rate_report,
                                hit_sequence, oracle_predictions, simulate, simulate_predictive,
                                window_of)
from cachecast.errors import EmptyTrace, MissingPrediction, ZeroCapacity
from cachecast.trace import SynthConfig, generate_synthetic
from references import reference_lfu, reference_lru

A, B, C = 0, 1, 2


small_traces = st.tuples(st.lists(st.integers(0, 9), min_size=1, max_size=50), st.integers(1, 8))


@given(small_traces)
def test_lru_matches_reference(case):
    seq, cap = case
    assert hit_sequence(seq, "lru", cap) == reference_lru(seq, cap)


@given(small_traces)
def test_lfu_matches_reference(case):
    seq, cap = case
    assert hit_sequence(seq, "lfu", cap) == reference_lfu(seq, cap)


@given(small_traces)
def test_lru_stack_inclusion(case):
    seq, cap = case
    small = hit_sequence(seq, "lru", cap)
    big = hit_sequence(seq, "lru", cap + 1)
    assert all(b or not s for s, b in zip(small, big))


def test_lru_hand_example():
    m = simulate([A, B, A, C, B], "lru", 2)
    assert m.hits == 1 and m.hit_rate == 0.2


def test_single_slot_repeated_block():
    for policy in ("lru", "lfu"):
        assert simulate([A, A, A], policy, 1).hits == 2


def test_large_capacity_only_cold_misses():
    seq = [3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5]
    for policy in ("lru", "lfu"):
        m = simulate(seq, policy, len(set(seq)))
        assert m.misses == len(set(seq)) and m.hits == len(seq) - len(set(seq))
        assert m.evictions == 0


def test_lfu_keeps_history_after_eviction():
    cache = LfuCache(1)
    for b in [A, A, B]:
        cache.access(b)
    assert B in cache and cache.freq[A] == 2


def test_capacity_and_empty_errors():
    with pytest.raises(ZeroCapacity):
        simulate([A], "lru", 0)
    with pytest.raises(ZeroCapacity):
        LruCache(0)
    with pytest.raises(EmptyTrace):
        simulate([], "lfu", 2)


class Recording(LruCache):
    peak = 0

    def access(self, block):
        hit = super().access(block)
        Recording.peak = max(Recording.peak, len(self))
        return hit


@given(small_traces)
def test_occupancy_never_exceeds_capacity(case):
    seq, cap = case
    Recording.peak = 0
    cache = Recording(cap)
    for b in seq:
        cache.access(b)
    assert Recording.peak <= cap


def uniform(blocks, windows, value=0.5):
    return Predictions(blocks, np.full((len(blocks), windows), value))


def test_predictive_single_slot():
    m = simulate_predictive([(0, A), (0, A), (0, A)], uniform([A], 1), 1)
    assert m.hits == 2


def test_predictive_uniform_scores_evict_lowest_id():
    events = [(0, 5), (0, 3), (0, 7)]
    m = simulate_predictive(events, uniform([3, 5, 7], 1), 2)
    assert m.evictions == 1
    # block 3 was evicted, so 5 and 7 remain resident and hit
    again = simulate_predictive(events + [(0, 5), (0, 7), (0, 3)], uniform([3, 5, 7], 1), 2)
    assert again.hits == 2


def test_predictive_prefetch_and_demote():
    preds = Predictions([0, 1, 2], np.array([[0.9, 0.0], [0.1, 0.8], [0.0, 0.7]]))
    events = [(0, 0), (1, 1), (1, 2)]
    m = simulate_predictive(events, preds, capacity=2, prefetch_budget=2, demote_threshold=0.05)
    assert m.demotions == 1                    # block 0 drops at window 1
    assert m.prefetch_issued == 3 and m.prefetch_used == 3
    assert m.hits == 3 and m.hits + m.misses == m.accesses
    assert m.prefetch_used <= m.prefetch_issued


def test_missing_prediction_raises():
    with pytest.raises(MissingPrediction) as exc:
        simulate_predictive([(0, 4)], uniform([1], 1), 2)
    assert (exc.value.block_id, exc.value.window) == (4, 0)
    with pytest.raises(MissingPrediction):
        simulate_predictive([(3, 1)], uniform([1], 2), 2)


def test_record_traces_need_window_length():
    recs = generate_synthetic(SynthConfig(num_events=200, num_blocks=4, phase_blocks=2, num_windows=4))
    preds = uniform(sorted({r.block_id for r in recs}), 4)
    with pytest.raises(ValueError):
        simulate_predictive(recs, preds, 2)
    m = simulate_predictive(recs, preds, 2, window_len_us=1_000_000)
    assert m.accesses == 200


def _periodic_events(seed=7):
    cfg = SynthConfig(num_events=20_000, seed=seed)
    recs = generate_synthetic(cfg)
    wins = window_of(recs, cfg.window_len_us)
    events = list(zip(wins, (r.block_id for r in recs)))
    blocks = sorted({b for _, b in events})
    counts = np.zeros((len(blocks), max(wins) + 1))
    for w, b in events:
        counts[blocks.index(b), w] += 1
    return events, blocks, counts


def test_oracle_beats_lru_and_inverted_oracle():
    events, blocks, counts = _periodic_events()
    oracle = oracle_predictions(blocks, counts)
    inverted = Predictions(blocks, 1.0 - oracle.values)
    good = simulate_predictive(events, oracle, 16, prefetch_budget=4)
    bad = simulate_predictive(events, inverted, 16, prefetch_budget=4)
    lru = simulate([b for _, b in events], "lru", 16)
    assert good.hit_rate >= lru.hit_rate
    assert good.hit_rate >= bad.hit_rate


def test_hits_out_collects_per_access_flags():
    events, blocks, counts = _periodic_events()
    flags = []
    m = simulate_predictive(events[:500], oracle_predictions(blocks, counts), 8, 2, hits_out=flags)
    assert len(flags) == 500 and sum(flags) == m.hits


def test_predictions_from_mapping():
    p = Predictions.from_mapping({(2, 0): 0.5, (1, 1): 0.25})
    assert p.get(2, 0) == 0.5 and p.get(1, 1) == 0.25 and p.num_windows == 2
    with pytest.raises(MissingPrediction):
        p.get(1, 0)


def test_hit_rate_report_rows():
    m = CacheMetrics(accesses=3, hits=1, misses=2)
    text = hit_rate_report([("lru", m)])
    lines = text.splitlines()
    assert lines == ["label,accesses,hits,hit_rate,prefetch_used,demotions", "lru,3,1,0.333333,0,0"]
    two = hit_rate_report([("b", m), ("a", CacheMetrics())]).splitlines()
    assert [ln.split(",")[0] for ln in two[1:]] == ["b", "a"]
    with pytest.raises(ValueError):
        hit_rate_report([])
