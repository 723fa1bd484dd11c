"""Per-block windowed feature matrices and next-window demand labels."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptySplit, EmptyTrace, HorizonTooLarge
from .trace import AccessRecord, Op

FEATURE_NAMES = ("access_count", "mean_size", "mean_latency", "read_fraction",
                 "recency_gap", "global_load")
NUM_FEATURES = len(FEATURE_NAMES)
COUNT_COL = FEATURE_NAMES.index("access_count")
RECENCY_COL = FEATURE_NAMES.index("recency_gap")
LOAD_COL = FEATURE_NAMES.index("global_load")
DEFAULT_RECENCY_CAP = 16
SPLIT_FRACTIONS = (0.70, 0.15)


@dataclass
class WindowAggregates:
    """Dense (block, window) aggregates; row i belongs to ``block_ids[i]``."""

    block_ids: np.ndarray        # (B,)
    window_len_us: int
    access_count: np.ndarray     # (B, W)
    mean_size: np.ndarray
    mean_latency: np.ndarray
    read_fraction: np.ndarray
    recency_gap: np.ndarray
    global_load: np.ndarray      # (W,)
    recency_cap: int = DEFAULT_RECENCY_CAP

    @property
    def num_windows(self) -> int:
        return self.access_count.shape[1]


@dataclass
class FeatureMatrix:
    block_id: int
    values: np.ndarray           # (T, N)
    window_len_us: int
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError("feature matrix must be T x N with T >= 1")
        if self.values.shape[1] != len(self.feature_names):
            raise ValueError("column count does not match feature_names")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite values")

    @property
    def T(self) -> int:
        return self.values.shape[0]


@dataclass
class DemandSeries:
    block_id: int
    values: np.ndarray           # (T,)
    scale: float = 1.0           # divide-by factor applied to raw counts


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std < 0):
            raise ValueError("std entries must be non-negative")

    @property
    def safe_std(self) -> np.ndarray:
        # a constant column can come out with a std of a few ulps; treat that as zero
        constant = self.std <= 1e-12 * np.maximum(np.abs(self.mean), 1.0)
        return np.where(constant, 1.0, self.std)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.safe_std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def build_windows(records: Sequence[AccessRecord], window_len_us: int,
                  num_windows: int | None = None,
                  recency_cap: int = DEFAULT_RECENCY_CAP) -> WindowAggregates:
    """Bucket records into fixed windows and aggregate per (block, window).

    Windows start at the first record's timestamp. ``recency_gap`` is the
    number of windows since the block's latest access (0 if accessed in the
    window), capped at ``recency_cap``; blocks not yet seen sit at the cap.
    """
    if not records:
        raise EmptyTrace()
    if window_len_us <= 0:
        raise ValueError("window_len_us must be positive")
    t0 = records[0].timestamp_us
    ts = np.fromiter((r.timestamp_us for r in records), dtype=np.int64, count=len(records))
    win = (ts - t0) // window_len_us
    if num_windows is None:
        num_windows = int(win.max()) + 1
    keep = win < num_windows
    blocks_raw = np.fromiter((r.block_id for r in records), dtype=np.int64, count=len(records))
    sizes = np.fromiter((r.size_bytes for r in records), dtype=np.float64, count=len(records))
    lats = np.fromiter((r.latency_us for r in records), dtype=np.float64, count=len(records))
    reads = np.fromiter((r.op is Op.Read for r in records), dtype=np.float64, count=len(records))

    block_ids, bidx = np.unique(blocks_raw[keep], return_inverse=True)
    if block_ids.size == 0:
        raise EmptyTrace("no records fall inside the requested windows")
    win = win[keep]
    B, W = block_ids.size, num_windows
    flat = bidx * W + win

    def _sum(weights):
        return np.bincount(flat, weights=weights, minlength=B * W).reshape(B, W)

    count = _sum(None).astype(np.float64)
    denom = np.where(count > 0, count, 1.0)
    mean_size = _sum(sizes[keep]) / denom
    mean_lat = _sum(lats[keep]) / denom
    read_frac = _sum(reads[keep]) / denom

    gap = np.full((B, W), float(recency_cap))
    last = np.full(B, -1, dtype=np.int64)
    for w in range(W):
        hit = count[:, w] > 0
        last[hit] = w
        seen = last >= 0
        gap[seen, w] = np.minimum(w - last[seen], recency_cap)

    return WindowAggregates(
        block_ids=block_ids, window_len_us=window_len_us, access_count=count,
        mean_size=mean_size, mean_latency=mean_lat, read_fraction=read_frac,
        recency_gap=gap, global_load=count.sum(axis=0), recency_cap=recency_cap,
    )


def feature_tensor(agg: WindowAggregates) -> np.ndarray:
    """All blocks' features stacked as (B, W, N) in FEATURE_NAMES order."""
    B, W = agg.access_count.shape
    return np.stack([agg.access_count, agg.mean_size, agg.mean_latency, agg.read_fraction,
                     agg.recency_gap, np.broadcast_to(agg.global_load, (B, W))], axis=-1)


def assemble_features(agg: WindowAggregates) -> list[FeatureMatrix]:
    stacked = feature_tensor(agg)
    return [FeatureMatrix(int(b), stacked[i].copy(), agg.window_len_us)
            for i, b in enumerate(agg.block_ids)]


def split_indices(T: int, fractions: tuple[float, float] = SPLIT_FRACTIONS) -> tuple[int, int]:
    """Chronological train/val/test boundaries: train=[0,a), val=[a,b), test=[b,T)."""
    a = int(T * fractions[0])
    b = int(T * (fractions[0] + fractions[1]))
    return a, b


def make_demand_labels(agg: WindowAggregates, horizon: int = 1,
                       train_end: int | None = None) -> list[DemandSeries]:
    """Label window t with the block's access count in window t + horizon.

    Counts are divided by the largest label count inside the training rows
    ``[0, train_end)`` (default: the chronological 70% split), so training
    labels lie in [0, 1]. The result has ``T - horizon`` entries per block.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    W = agg.num_windows
    if horizon >= W:
        raise HorizonTooLarge(f"horizon {horizon} >= number of windows {W}")
    raw = agg.access_count[:, horizon:]
    if train_end is None:
        train_end = split_indices(W - horizon)[0]
    if train_end < 1:
        raise EmptySplit("training split has no windows")
    peak = float(raw[:, :train_end].max())
    scale = peak if peak > 0 else 1.0
    return [DemandSeries(int(b), raw[i] / scale, scale) for i, b in enumerate(agg.block_ids)]


def fit_norm_stats(features: Sequence[FeatureMatrix], rows: slice | None = None) -> NormStats:
    """Population mean/std per feature over the given rows of every block."""
    rows = rows if rows is not None else slice(None)
    chunks = [fm.values[rows] for fm in features]
    stacked = np.concatenate(chunks, axis=0) if chunks else np.empty((0, NUM_FEATURES))
    if stacked.shape[0] == 0:
        raise EmptySplit("cannot fit normalization on an empty split")
    return NormStats(stacked.mean(axis=0), stacked.std(axis=0))


def apply_norm(fm: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    return FeatureMatrix(fm.block_id, stats.apply(fm.values), fm.window_len_us, fm.feature_names)


@dataclass
class Dataset:
    """Raw per-block features and labels plus chronological split bounds.

    ``features[i]`` and ``labels[i]`` share the same block and length T.
    Windows ``[0, train_end)`` train, ``[train_end, val_end)`` validate and
    ``[val_end, T)`` test. ``norm`` is always fitted on the train rows.
    """

    features: list[FeatureMatrix]
    labels: list[DemandSeries]
    train_end: int
    val_end: int
    norm: NormStats
    horizon: int = 1
    window_len_us: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels must pair up")
        if not 0 < self.train_end <= self.val_end <= self.T:
            raise ValueError("splits must satisfy 0 < train_end <= val_end <= T")

    @property
    def T(self) -> int:
        return self.features[0].T

    @property
    def block_ids(self) -> list[int]:
        return [fm.block_id for fm in self.features]

    @cached_property
    def X(self) -> np.ndarray:
        return np.stack([fm.values for fm in self.features])

    @cached_property
    def y(self) -> np.ndarray:
        return np.stack([ds.values for ds in self.labels])

    @property
    def label_scale(self) -> float:
        return self.labels[0].scale

    def split_slice(self, split: str) -> slice:
        bounds = {"train": (0, self.train_end), "val": (self.train_end, self.val_end),
                  "test": (self.val_end, self.T)}
        lo, hi = bounds[split]
        if hi <= lo:
            raise EmptySplit(f"{split} split is empty")
        return slice(lo, hi)


def build_dataset(records: Sequence[AccessRecord], window_len_us: int,
                  num_windows: int | None = None, horizon: int = 1,
                  recency_cap: int = DEFAULT_RECENCY_CAP,
                  fractions: tuple[float, float] = SPLIT_FRACTIONS) -> Dataset:
    agg = build_windows(records, window_len_us, num_windows, recency_cap)
    T = agg.num_windows - horizon
    if T < 1:
        raise HorizonTooLarge(f"horizon {horizon} >= number of windows {agg.num_windows}")
    train_end, val_end = split_indices(T, fractions)
    labels = make_demand_labels(agg, horizon, train_end)
    feats = [FeatureMatrix(fm.block_id, fm.values[:T], fm.window_len_us)
             for fm in assemble_features(agg)]
    norm = fit_norm_stats(feats, slice(0, train_end))
    return Dataset(feats, labels, train_end, val_end, norm, horizon, window_len_us,
                   meta={"num_windows": agg.num_windows, "recency_cap": recency_cap})


def save_dataset(ds: Dataset, out_dir: str | os.PathLike) -> Path:
    """Write one ``block_<id>.csv`` per block and a ``dataset.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for fm, lab in zip(ds.features, ds.labels):
        with open(out / f"block_{fm.block_id}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", *fm.feature_names, "label"])
            for t in range(fm.T):
                w.writerow([t, *(repr(float(v)) for v in fm.values[t]), repr(float(lab.values[t]))])
    sidecar = {
        "feature_names": list(FEATURE_NAMES),
        "norm": ds.norm.to_dict(),
        "splits": {"train": [0, ds.train_end], "val": [ds.train_end, ds.val_end],
                   "test": [ds.val_end, ds.T]},
        "horizon": ds.horizon,
        "window_len_us": ds.window_len_us,
        "label_scale": ds.label_scale,
        "blocks": ds.block_ids,
    }
    (out / "dataset.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return out
