"""End-to-end comparison: featurize a trace, train/evaluate every predictor
across seeds, replay the held-out windows through the predictive cache, and
render the MSE/MAE comparison reports."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .cachesim import CacheMetrics, Predictions, oracle_predictions, simulate, simulate_predictive
from .errors import CachecastError, StageError
from .features import Dataset, build_dataset
from .models import TABLE1_ORDER, ArchSpec, Kind, init_model
from .trace import AccessRecord, SynthConfig, generate_synthetic, load_trace
from .trainer import LossCurve, Metrics, TrainConfig, evaluate, predict_dataset, train

log = logging.getLogger(__name__)

DEFAULT_KINDS = TABLE1_ORDER


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig | None = field(default_factory=SynthConfig)
    trace_path: str | None = None
    block_size: int = 4096
    window_len_us: int = 1_000_000
    num_windows: int | None = 200
    horizon: int = 1
    archs: tuple[ArchSpec, ...] = tuple(ArchSpec.default(k) for k in DEFAULT_KINDS)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    capacities: tuple[int, ...] = (16,)
    prefetch_budget: int = 4
    demote_threshold: float = 0.0

    def __post_init__(self):
        if (self.synth is None) == (self.trace_path is None):
            raise ValueError("exactly one of synth / trace_path must be set")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.archs:
            raise ValueError("at least one architecture is required")
        if any(c < 1 for c in self.capacities):
            raise ValueError("cache capacities must be >= 1")

    def to_dict(self) -> dict:
        return {
            "synth": dataclasses.asdict(self.synth) if self.synth else None,
            "trace_path": self.trace_path,
            "block_size": self.block_size,
            "window_len_us": self.window_len_us,
            "num_windows": self.num_windows,
            "horizon": self.horizon,
            "archs": [a.to_dict() for a in self.archs],
            "train": dataclasses.asdict(self.train),
            "seeds": list(self.seeds),
            "capacities": list(self.capacities),
            "prefetch_budget": self.prefetch_budget,
            "demote_threshold": self.demote_threshold,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunResult:
    kind: Kind
    seed: int
    metrics: Metrics
    curve: LossCurve | None
    cache: dict[int, CacheMetrics]


@dataclass
class Aggregate:
    mse_mean: float
    mse_std: float
    mae_mean: float
    mae_std: float


@dataclass
class ExperimentReport:
    runs: list[RunResult]
    aggregates: dict[Kind, Aggregate]
    baselines: list[tuple[str, int, CacheMetrics]]
    provenance: dict

    def runs_for(self, kind: Kind) -> list[RunResult]:
        return [r for r in self.runs if r.kind is kind]

    def mean_hit_rate(self, kind: Kind, capacity: int) -> float:
        return float(np.mean([r.cache[capacity].hit_rate for r in self.runs_for(kind)]))

    def baseline(self, label: str, capacity: int) -> CacheMetrics:
        for name, cap, m in self.baselines:
            if name == label and cap == capacity:
                return m
        raise KeyError((label, capacity))


def load_records(cfg: ExperimentConfig) -> list[AccessRecord]:
    if cfg.synth is not None:
        return generate_synthetic(cfg.synth)
    return load_trace(cfg.trace_path, cfg.block_size)


def heldout_events(records: Sequence[AccessRecord], ds: Dataset) -> list[tuple[int, int]]:
    """(window, block) accesses in the windows the test rows predict.

    Row t of the dataset forecasts window t + horizon, so the test rows
    ``[val_end, T)`` cover windows ``[val_end + horizon, T + horizon)``.
    """
    t0 = records[0].timestamp_us
    lo, hi = ds.val_end + ds.horizon, ds.T + ds.horizon
    out = []
    for r in records:
        w = (r.timestamp_us - t0) // ds.window_len_us
        if lo <= w < hi:
            out.append((int(w), r.block_id))
    return out


def window_predictions(pred_rows: np.ndarray, ds: Dataset) -> Predictions:
    """Re-index row predictions by the window they forecast."""
    B, T = pred_rows.shape
    vals = np.zeros((B, T + ds.horizon))
    vals[:, ds.horizon:] = pred_rows
    return Predictions(ds.block_ids, vals)


def _run_cell(ds: Dataset, events, spec: ArchSpec, train_cfg: TrainConfig, seed: int,
              capacities, prefetch_budget, demote_threshold) -> RunResult:
    spec = dataclasses.replace(spec, seed=seed)
    model = init_model(spec)
    curve = None
    if spec.kind.learned:
        model, curve = train(model, ds, dataclasses.replace(train_cfg, seed=seed))
    metrics = evaluate(model, ds, "test")
    preds = window_predictions(predict_dataset(model, ds), ds)
    cache = {c: simulate_predictive(events, preds, c, prefetch_budget, demote_threshold)
             for c in capacities}
    return RunResult(spec.kind, seed, metrics, curve, cache)


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (CachecastError, OSError) as exc:
        raise StageError(name, exc) from exc


def _threads() -> int:
    raw = os.environ.get("CACHECAST_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise CachecastError(f"CACHECAST_THREADS must be an integer, got {raw!r}") from None
    return n if n > 0 else (os.cpu_count() or 1)


def _aggregate(runs: Sequence[RunResult]) -> Aggregate:
    mse = np.array([r.metrics.mse for r in runs])
    mae = np.array([r.metrics.mae for r in runs])
    return Aggregate(float(mse.mean()), float(mse.std()), float(mae.mean()), float(mae.std()))


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    with _stage("ingest"):
        records = load_records(cfg)
    with _stage("featurize"):
        ds = build_dataset(records, cfg.window_len_us, cfg.num_windows, cfg.horizon)
        events = heldout_events(records, ds)

    cells = [(spec, seed) for spec in cfg.archs for seed in cfg.seeds]
    args = [(ds, events, spec, cfg.train, seed, cfg.capacities, cfg.prefetch_budget,
             cfg.demote_threshold) for spec, seed in cells]
    workers = min(_threads(), len(cells))
    with _stage("train/evaluate"):
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                runs = list(pool.map(_run_cell, *zip(*args)))
        else:
            runs = [_run_cell(*a) for a in args]
    for r in runs:
        log.info("%s seed %d: mse %.6f mae %.6f", r.kind.value, r.seed, r.metrics.mse, r.metrics.mae)

    kinds = list(dict.fromkeys(spec.kind for spec in cfg.archs))
    aggregates = {k: _aggregate([r for r in runs if r.kind is k]) for k in kinds}

    baselines = []
    block_seq = [b for _, b in events]
    counts = np.zeros((len(ds.block_ids), ds.T + ds.horizon))
    rows = {b: i for i, b in enumerate(ds.block_ids)}
    for w, b in events:
        counts[rows[b], w] += 1
    oracle = oracle_predictions(ds.block_ids, counts)
    for c in cfg.capacities:
        baselines.append(("LRU", c, simulate(block_seq, "lru", c)))
        baselines.append(("LFU", c, simulate(block_seq, "lfu", c)))
        baselines.append(("Oracle", c, simulate_predictive(events, oracle, c, cfg.prefetch_budget,
                                                           cfg.demote_threshold)))
    provenance = {"config_sha256": cfg.digest(), "artifact_version": __version__,
                  "config": cfg.to_dict(), "num_records": len(records),
                  "heldout_accesses": len(events)}
    return ExperimentReport(runs, aggregates, baselines, provenance)


# -- rendering -----------------------------------------------------------------

def _num(x: float) -> str:
    return f"{x:.10f}"


def table1_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "seed", "mse", "mae"])
    order = [k for k in TABLE1_ORDER if k in report.aggregates]
    for k in order:
        for r in report.runs_for(k):
            w.writerow([k.display, r.seed, _num(r.metrics.mse), _num(r.metrics.mae)])
    for k in order:
        a = report.aggregates[k]
        w.writerow([k.display, "mean", _num(a.mse_mean), _num(a.mae_mean)])
        w.writerow([k.display, "std", _num(a.mse_std), _num(a.mae_std)])
    return buf.getvalue()


def hitrates_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "seed", "capacity", "accesses", "hits", "hit_rate", "prefetch_used", "demotions"])
    for label, cap, m in report.baselines:
        w.writerow([label, "-", cap, m.accesses, m.hits, f"{m.hit_rate:.6f}", m.prefetch_used, m.demotions])
    for k in [k for k in TABLE1_ORDER if k in report.aggregates]:
        for r in report.runs_for(k):
            for cap, m in sorted(r.cache.items()):
                w.writerow([f"predictive:{k.display}", r.seed, cap, m.accesses, m.hits,
                            f"{m.hit_rate:.6f}", m.prefetch_used, m.demotions])
    return buf.getvalue()


def _resolve_kind(key) -> Kind:
    if isinstance(key, Kind):
        return key
    for k in Kind:
        if key in (k.value, k.display) or key.upper() == k.display:
            return k
    raise KeyError(f"unknown model {key!r}")


def format_table1(source: ExperimentReport | Mapping, style: str = "text") -> str:
    """Render MSE/MAE rows in the fixed order (LRU, LFU, RNN, GRU-RNN, LSTM,
    CNN-LSTM) with three decimals.

    ``source`` is a report (mean values are shown) or a mapping from model to
    ``(mse, mae)``. ``style`` is ``"text"`` or ``"csv"``.
    """
    if isinstance(source, ExperimentReport):
        values = {k: (a.mse_mean, a.mae_mean) for k, a in source.aggregates.items()}
    else:
        values = {_resolve_kind(k): tuple(v) for k, v in source.items()}
    rows = [(k.display, f"{values[k][0]:.3f}", f"{values[k][1]:.3f}")
            for k in TABLE1_ORDER if k in values]
    if style == "csv":
        return "model,mse,mae\n" + "".join(f"{m},{a},{b}\n" for m, a, b in rows)
    if style != "text":
        raise ValueError(f"unknown style {style!r}")
    width = max(len("Model"), *(len(r[0]) for r in rows))
    lines = [f"{'Model':<{width}}  {'MSE':>6}  {'MAE':>6}"]
    lines += [f"{m:<{width}}  {a:>6}  {b:>6}" for m, a, b in rows]
    return "\n".join(lines) + "\n"


def write_report(report: ExperimentReport, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table1.csv").write_text(table1_csv(report))
    (out / "hitrates.csv").write_text(hitrates_csv(report))
    for r in report.runs:
        if r.curve is not None:
            (out / f"losscurve_{r.kind.value}_{r.seed}.csv").write_text(r.curve.to_csv())
    (out / "provenance.json").write_text(json.dumps(report.provenance, indent=2, sort_keys=True) + "\n")
    return out
