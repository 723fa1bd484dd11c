"""Fixed-capacity block cache simulation: LRU, history-keeping LFU, and a
prediction-driven policy that prefetches and demotes at window boundaries.

Reads and writes both count as accesses. Every tie is broken towards the
smaller block id.
"""

from __future__ import annotations

import csv
import io
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyTrace, MissingPrediction, ZeroCapacity
from .trace import AccessRecord


@dataclass
class CacheMetrics:
    accesses: int = 0
    hits: int = 0
    misses: int = 0
    prefetch_issued: int = 0
    prefetch_used: int = 0
    evictions: int = 0
    demotions: int = 0

    @property
    def hit_rate(self) -> float:
        return self.hits / self.accesses if self.accesses else 0.0


class LruCache:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ZeroCapacity()
        self.capacity = capacity
        self._order: OrderedDict[int, None] = OrderedDict()
        self.evictions = 0

    def __len__(self):
        return len(self._order)

    def __contains__(self, block):
        return block in self._order

    def access(self, block: int) -> bool:
        if block in self._order:
            self._order.move_to_end(block)
            return True
        if len(self._order) >= self.capacity:
            self._order.popitem(last=False)
            self.evictions += 1
        self._order[block] = None
        return False


class LfuCache:
    """LFU whose frequency counts survive eviction; ties go to the least
    recently used block."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ZeroCapacity()
        self.capacity = capacity
        self.resident: set[int] = set()
        self.freq: dict[int, int] = {}
        self.last: dict[int, int] = {}
        self.clock = 0
        self.evictions = 0

    def __len__(self):
        return len(self.resident)

    def __contains__(self, block):
        return block in self.resident

    def access(self, block: int) -> bool:
        self.clock += 1
        self.freq[block] = self.freq.get(block, 0) + 1
        hit = block in self.resident
        if not hit:
            if len(self.resident) >= self.capacity:
                victim = min(self.resident, key=lambda b: (self.freq[b], self.last[b]))
                self.resident.remove(victim)
                self.evictions += 1
            self.resident.add(block)
        self.last[block] = self.clock
        return hit


_POLICIES = {"lru": LruCache, "lfu": LfuCache}


def _blocks(trace: Iterable[AccessRecord | int]) -> list[int]:
    return [r.block_id if isinstance(r, AccessRecord) else int(r) for r in trace]


def hit_sequence(trace: Iterable[AccessRecord | int], policy: str, capacity: int) -> list[bool]:
    """Per-access hit flags for ``policy`` in {"lru", "lfu"}."""
    cache = _POLICIES[policy.lower()](capacity)
    return [cache.access(b) for b in _blocks(trace)]


def simulate(trace: Sequence[AccessRecord | int], policy: str, capacity: int) -> CacheMetrics:
    if capacity < 1:
        raise ZeroCapacity()
    blocks = _blocks(trace)
    if not blocks:
        raise EmptyTrace()
    cache = _POLICIES[policy.lower()](capacity)
    m = CacheMetrics()
    for b in blocks:
        m.accesses += 1
        if cache.access(b):
            m.hits += 1
        else:
            m.misses += 1
    m.evictions = cache.evictions
    return m


class Predictions:
    """Predicted demand per (block, window), backed by a (blocks, windows) array."""

    def __init__(self, block_ids: Sequence[int], values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != len(block_ids):
            raise ValueError("one prediction row per block is required")
        self.index = {int(b): i for i, b in enumerate(block_ids)}
        self.values = values

    @property
    def num_windows(self) -> int:
        return self.values.shape[1]

    def get(self, block: int, window: int) -> float:
        row = self.index.get(block)
        if row is None or not 0 <= window < self.values.shape[1]:
            raise MissingPrediction(block, window)
        value = float(self.values[row, window])
        if value != value:  # NaN marks a cell that was never supplied
            raise MissingPrediction(block, window)
        return value

    @classmethod
    def from_mapping(cls, preds: Mapping[tuple[int, int], float]) -> "Predictions":
        blocks = sorted({b for b, _ in preds})
        W = max(w for _, w in preds) + 1
        vals = np.full((len(blocks), W), np.nan)
        rows = {b: i for i, b in enumerate(blocks)}
        for (b, w), v in preds.items():
            vals[rows[b], w] = v
        return cls(blocks, vals)


def window_of(records: Sequence[AccessRecord], window_len_us: int, t0: int | None = None) -> list[int]:
    t0 = records[0].timestamp_us if t0 is None else t0
    return [(r.timestamp_us - t0) // window_len_us for r in records]


def simulate_predictive(trace: Sequence[tuple[int, int]] | Sequence[AccessRecord],
                        predictions: Predictions, capacity: int, prefetch_budget: int = 0,
                        demote_threshold: float = 0.0,
                        window_len_us: int | None = None,
                        hits_out: list[bool] | None = None) -> CacheMetrics:
    """Replay ``trace`` with demand-driven placement.

    ``trace`` is either ``(window, block_id)`` pairs or access records (then
    ``window_len_us`` is required). ``predictions.get(b, w)`` is the demand
    predicted for block b during window w. On entering each window:

    1. resident blocks predicted below ``demote_threshold`` are demoted;
    2. up to ``prefetch_budget`` non-resident blocks with the highest positive
       prediction are prefetched, each only if the cache has room or the
       candidate outranks the lowest-predicted resident, which is evicted.

    A miss always inserts the block, evicting the lowest-predicted resident.
    When ``hits_out`` is given, one hit flag per access is appended to it.
    """
    if capacity < 1:
        raise ZeroCapacity()
    if prefetch_budget < 0 or demote_threshold < 0:
        raise ValueError("prefetch_budget and demote_threshold must be non-negative")
    if trace and isinstance(trace[0], AccessRecord):
        if window_len_us is None:
            raise ValueError("window_len_us is required for record traces")
        events = list(zip(window_of(trace, window_len_us), _blocks(trace)))
    else:
        events = [(int(w), int(b)) for w, b in trace]
    if not events:
        raise EmptyTrace()

    known = sorted(predictions.index)
    resident: set[int] = set()
    prefetched: set[int] = set()
    m = CacheMetrics()
    current = None

    col: dict[int, float] = {}

    def score(b, w):
        s = col.get(b)
        return predictions.get(b, w) if s is None else s

    def victim(w):
        return min(resident, key=lambda b: (score(b, w), b))

    def evict(b):
        resident.discard(b)
        prefetched.discard(b)

    for w, block in events:
        if w != current:
            current = w
            col = ({b: float(v) for b, i in predictions.index.items()
                    if (v := predictions.values[i, w]) == v}
                   if 0 <= w < predictions.num_windows else {})
            for b in sorted(resident):
                if score(b, w) < demote_threshold:
                    evict(b)
                    m.demotions += 1
            if prefetch_budget:
                ranked = sorted((b for b in known if b not in resident),
                                key=lambda b: (-score(b, w), b))
                for b in ranked[:prefetch_budget]:
                    s = score(b, w)
                    if s <= 0:
                        break
                    if len(resident) >= capacity:
                        v = victim(w)
                        if score(v, w) >= s:
                            break
                        evict(v)
                        m.evictions += 1
                    resident.add(b)
                    prefetched.add(b)
                    m.prefetch_issued += 1
        m.accesses += 1
        if hits_out is not None:
            hits_out.append(block in resident)
        if block in resident:
            m.hits += 1
            if block in prefetched:
                m.prefetch_used += 1
                prefetched.discard(block)
            continue
        m.misses += 1
        score(block, w)  # surfaces MissingPrediction for unknown blocks
        if len(resident) >= capacity:
            evict(victim(w))
            m.evictions += 1
        resident.add(block)
    return m


def oracle_predictions(block_ids: Sequence[int], counts: np.ndarray) -> Predictions:
    """Ground-truth per-window access counts, max-scaled to [0, 1]."""
    counts = np.asarray(counts, dtype=np.float64)
    peak = counts.max()
    return Predictions(block_ids, counts / peak if peak > 0 else counts)


HIT_RATE_COLUMNS = ("label", "accesses", "hits", "hit_rate", "prefetch_used", "demotions")


def hit_rate_report(rows: Sequence[tuple[str, CacheMetrics]]) -> str:
    if not rows:
        raise ValueError("hit_rate_report needs at least one row")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HIT_RATE_COLUMNS)
    for label, m in rows:
        w.writerow([label, m.accesses, m.hits, f"{m.hit_rate:.6f}", m.prefetch_used, m.demotions])
    return buf.getvalue()
