"""``cachecast`` command line.

Settings resolve as built-in defaults, then the ``--config`` TOML file, then
explicit flags. Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cachesim import (Predictions, hit_rate_report, hit_sequence, simulate, simulate_predictive,
                       window_of)
from .errors import (CachecastError, ConfigError, HeuristicModelNotTrainable, InvalidSpec, StageError,
                     ZeroCapacity)
from .experiment import ExperimentConfig, format_table1, run_experiment, write_report
from .features import build_dataset, save_dataset
from .models import ArchSpec, Kind, init_model, predict_array
from .trace import SynthConfig, generate_synthetic, load_trace, save_trace, trace_stats
from .trainer import TrainConfig, evaluate, load_checkpoint, loss_curve_svg, save_checkpoint, train

log = logging.getLogger("cachecast")


class UsageError(Exception):
    """Bad flag or config value; maps to exit code 2."""


def _int_list(text):
    if isinstance(text, list):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _str_list(text):
    if isinstance(text, list):
        return [str(x) for x in text]
    return [x.strip() for x in str(text).split(",") if x.strip()]


# section -> key -> (converter, default)
SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "trace": {
        "source": (str, "synthetic"),
        "blocks": (int, 64),
        "events": (int, 50_000),
        "zipf": (float, 1.0),
        "period": (int, 20),
        "phase_blocks": (int, 8),
        "load_amplitude": (float, 0.5),
        "block_size": (int, 4096),
        "seed": (int, 7),
    },
    "features": {
        "window_us": (int, 1_000_000),
        "windows": (int, 200),
        "horizon": (int, 1),
    },
    "models": {
        "archs": (_str_list, [k.value for k in Kind]),
        "hidden": (int, 16),
    },
    "train": {
        "epochs": (int, 100),
        "batch_size": (int, 16),
        "lr": (float, 1e-3),
        "optimizer": (str, "adam"),
        "clip": (float, 5.0),
        "patience": (int, 10),
        "seed": (int, 0),
    },
    "experiment": {
        "seeds": (_int_list, [0, 1, 2, 3, 4]),
        "capacities": (_int_list, [16]),
        "prefetch_budget": (int, 4),
        "demote_threshold": (float, 0.0),
    },
    "simulate": {
        "policy": (str, "lru"),
        "capacity": (int, 16),
    },
}


@dataclass
class Flag:
    names: tuple[str, ...]
    section: str
    key: str
    help: str


def _key_line(text: str, section: str, key: str | None) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return no
    return None


def load_config_file(path: str | os.PathLike) -> dict[str, dict[str, Any]]:
    """Parse and validate a TOML config; every section and key must be known."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out: dict[str, dict[str, Any]] = {}
    for section, body in raw.items():
        if section not in SCHEMA or not isinstance(body, dict):
            line = _key_line(text, section, None)
            raise ConfigError(f"{path}:{line or '?'}: unknown section [{section}]")
        for key, value in body.items():
            where = f"{path}:{_key_line(text, section, key) or '?'}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key '{key}' in [{section}]")
            conv = SCHEMA[section][key][0]
            try:
                out.setdefault(section, {})[key] = conv(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{where}: bad value for '{section}.{key}': {exc}") from exc
    return out


def resolve(file_cfg: dict, args: argparse.Namespace, flags: list[Flag]) -> dict[str, dict[str, Any]]:
    cfg = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for s, body in file_cfg.items():
        cfg[s].update(body)
    for f in flags:
        dest = f.names[-1].lstrip("-").replace("-", "_")
        if hasattr(args, dest):
            cfg[f.section][f.key] = getattr(args, dest)
    return cfg


def _add_flags(p: argparse.ArgumentParser, flags: list[Flag]):
    for f in flags:
        conv, default = SCHEMA[f.section][f.key]
        shown = ",".join(map(str, default)) if isinstance(default, list) else default
        p.add_argument(*f.names, type=conv, default=argparse.SUPPRESS,
                       help=f"{f.help} (default: {shown}; config [{f.section}] {f.key})")


def _require_positive(cfg, pairs):
    for flag, (section, key) in pairs.items():
        if cfg[section][key] <= 0:
            raise UsageError(f"{flag} must be positive, got {cfg[section][key]}")


GEN_FLAGS = [
    Flag(("--blocks",), "trace", "blocks", "number of distinct blocks"),
    Flag(("--events",), "trace", "events", "number of accesses to generate"),
    Flag(("--zipf",), "trace", "zipf", "Zipf popularity exponent"),
    Flag(("--period",), "trace", "period", "windows between hot-set rotations"),
    Flag(("--phase-blocks",), "trace", "phase_blocks", "blocks in the rotating hot set"),
    Flag(("--load-amplitude",), "trace", "load_amplitude", "per-period load ramp amplitude in [0, 1)"),
    Flag(("--block-size",), "trace", "block_size", "block size in bytes"),
    Flag(("--windows",), "features", "windows", "number of time windows"),
    Flag(("--window-us",), "features", "window_us", "window length in microseconds"),
    Flag(("--seed",), "trace", "seed", "generator seed"),
]

FEATURE_FLAGS = [
    Flag(("--window-us",), "features", "window_us", "window length in microseconds"),
    Flag(("--windows",), "features", "windows", "number of windows (0 = derive from trace)"),
    Flag(("--horizon",), "features", "horizon", "forecast horizon in windows"),
    Flag(("--block-size",), "trace", "block_size", "block size for MSR offsets"),
]

TRAIN_FLAGS = FEATURE_FLAGS + [
    Flag(("--hidden",), "models", "hidden", "recurrent hidden size"),
    Flag(("--epochs",), "train", "epochs", "maximum epochs"),
    Flag(("--batch-size",), "train", "batch_size", "sequences per update"),
    Flag(("--lr",), "train", "lr", "learning rate"),
    Flag(("--optimizer",), "train", "optimizer", "adam or sgd"),
    Flag(("--clip",), "train", "clip", "global gradient-norm clip"),
    Flag(("--patience",), "train", "patience", "early-stop patience in epochs"),
    Flag(("--seed",), "train", "seed", "model-init and shuffling seed"),
]

SIM_FLAGS = [
    Flag(("--policy",), "simulate", "policy", "lru, lfu or predictive"),
    Flag(("--capacity",), "simulate", "capacity", "cache capacity in blocks"),
    Flag(("--prefetch-budget",), "experiment", "prefetch_budget", "prefetches per window (predictive)"),
    Flag(("--demote-threshold",), "experiment", "demote_threshold", "demote below this predicted demand"),
    Flag(("--window-us",), "features", "window_us", "window length (lru/lfu timeline only)"),
    Flag(("--block-size",), "trace", "block_size", "block size for MSR offsets"),
    Flag(("--seed",), "train", "seed", "accepted for uniformity; simulation is deterministic"),
]

REPORT_FLAGS = [
    Flag(("--seeds",), "experiment", "seeds", "comma-separated model seeds"),
    Flag(("--epochs",), "train", "epochs", "maximum epochs"),
    Flag(("--capacities",), "experiment", "capacities", "comma-separated cache capacities"),
    Flag(("--seed",), "trace", "seed", "synthetic workload seed"),
]

STATS_FLAGS = [
    Flag(("--block-size",), "trace", "block_size", "block size for MSR offsets"),
    Flag(("--seed",), "train", "seed", "accepted for uniformity; stats are deterministic"),
]

FEATURIZE_FLAGS = FEATURE_FLAGS + [
    Flag(("--seed",), "train", "seed", "accepted for uniformity; featurization is deterministic"),
]


def _synth_config(cfg) -> SynthConfig:
    t, f = cfg["trace"], cfg["features"]
    try:
        return SynthConfig(num_blocks=t["blocks"], num_events=t["events"], zipf_alpha=t["zipf"],
                           period_windows=t["period"], phase_blocks=t["phase_blocks"], seed=t["seed"],
                           block_size=t["block_size"], num_windows=f["windows"],
                           window_len_us=f["window_us"], load_amplitude=t["load_amplitude"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _train_config(cfg) -> TrainConfig:
    t = cfg["train"]
    try:
        return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"], learning_rate=t["lr"],
                           optimizer=t["optimizer"], grad_clip_norm=t["clip"],
                           early_stop_patience=t["patience"], seed=t["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _num_windows(cfg):
    w = cfg["features"]["windows"]
    return None if w == 0 else w


def cmd_gen(args, cfg):
    _require_positive(cfg, {"--blocks": ("trace", "blocks"), "--events": ("trace", "events"),
                            "--period": ("trace", "period"), "--phase-blocks": ("trace", "phase_blocks"),
                            "--windows": ("features", "windows"), "--window-us": ("features", "window_us"),
                            "--block-size": ("trace", "block_size")})
    if cfg["trace"]["zipf"] < 0:
        raise UsageError(f"--zipf must be non-negative, got {cfg['trace']['zipf']}")
    records = generate_synthetic(_synth_config(cfg))
    save_trace(records, args.output)
    s = trace_stats(records)
    print(f"records={s.num_records} blocks={s.num_blocks} span_us={s.time_span_us} "
          f"read_fraction={s.read_fraction:.4f}")


def cmd_stats(args, cfg):
    s = trace_stats(load_trace(args.trace, cfg["trace"]["block_size"]))
    print(f"records={s.num_records} blocks={s.num_blocks} span_us={s.time_span_us} "
          f"read_fraction={s.read_fraction:.4f}")


def _dataset_from(args, cfg):
    _require_positive(cfg, {"--window-us": ("features", "window_us"), "--horizon": ("features", "horizon")})
    records = load_trace(args.trace, cfg["trace"]["block_size"])
    f = cfg["features"]
    return records, build_dataset(records, f["window_us"], _num_windows(cfg), f["horizon"])


def cmd_featurize(args, cfg):
    _, ds = _dataset_from(args, cfg)
    out = save_dataset(ds, args.output)
    print(f"wrote {len(ds.features)} block files to {out} (T={ds.T}, train<{ds.train_end}, val<{ds.val_end})")


def cmd_train(args, cfg):
    kind = Kind(args.arch)
    if not kind.learned:
        raise UsageError("heuristic models are not trainable")
    _require_positive(cfg, {"--hidden": ("models", "hidden")})
    tcfg = _train_config(cfg)
    _, ds = _dataset_from(args, cfg)
    model = init_model(ArchSpec.default(kind, seed=tcfg.seed, hidden_size=cfg["models"]["hidden"]))
    model, curve = train(model, ds, tcfg)
    f = cfg["features"]
    save_checkpoint(model, args.output, meta={"window_len_us": f["window_us"], "horizon": f["horizon"]})
    loss_path = args.loss_csv or str(Path(args.output).with_suffix(".loss.csv"))
    Path(loss_path).write_text(curve.to_csv())
    if args.plot:
        Path(args.plot).write_text(loss_curve_svg(curve, title=f"{kind.display} training loss"))
    m = evaluate(model, ds, "val")
    print(f"epochs={len(curve)} val_mse={m.mse:.6f} val_mae={m.mae:.6f}")


def cmd_simulate(args, cfg):
    policy = cfg["simulate"]["policy"].lower()
    capacity = cfg["simulate"]["capacity"]
    if policy not in ("lru", "lfu", "predictive"):
        raise UsageError(f"--policy must be lru, lfu or predictive, got {policy!r}")
    if capacity < 1:
        raise UsageError(f"--capacity must be >= 1, got {capacity}")
    if policy == "predictive" and not args.model:
        raise UsageError("--policy predictive requires --model")
    records = load_trace(args.trace, cfg["trace"]["block_size"])
    if policy == "predictive":
        model, meta = load_checkpoint(args.model, with_meta=True)
        window_us = meta.get("window_len_us", cfg["features"]["window_us"])
        horizon = meta.get("horizon", 1)
        ds = build_dataset(records, window_us, None, horizon)
        rows = predict_array(model, ds.X)
        vals = [[0.0] * horizon + list(r) for r in rows]
        preds = Predictions(ds.block_ids, vals)
        windows = window_of(records, window_us)
        events = list(zip(windows, (r.block_id for r in records)))
        flags: list[bool] = []
        m = simulate_predictive(events, preds, capacity, cfg["experiment"]["prefetch_budget"],
                                cfg["experiment"]["demote_threshold"], hits_out=flags)
    else:
        window_us = cfg["features"]["window_us"]
        windows = window_of(records, window_us)
        m = simulate(records, policy, capacity)
        flags = hit_sequence(records, policy, capacity) if args.timeline else []
    report = hit_rate_report([(policy, m)])
    if args.output:
        Path(args.output).write_text(report)
    else:
        sys.stdout.write(report)
    if args.timeline:
        Path(args.timeline).write_text(_timeline_csv(policy, windows, flags))
    print(f"hit_rate={m.hit_rate:.6f}")


def _timeline_csv(policy, windows, flags) -> str:
    per: dict[int, list[int]] = {}
    for w, hit in zip(windows, flags):
        acc = per.setdefault(w, [0, 0])
        acc[0] += 1
        acc[1] += int(hit)
    lines = ["window,policy,hit_rate"]
    lines += [f"{w},{policy},{h / n:.6f}" for w, (n, h) in sorted(per.items())]
    return "\n".join(lines) + "\n"


def experiment_config(cfg) -> ExperimentConfig:
    t, f, mo, ex = cfg["trace"], cfg["features"], cfg["models"], cfg["experiment"]
    try:
        archs = tuple(ArchSpec.default(Kind(a), hidden_size=mo["hidden"]) for a in mo["archs"])
    except (ValueError, InvalidSpec) as exc:
        raise UsageError(f"[models] archs: {exc}") from exc
    synth = _synth_config(cfg) if t["source"] == "synthetic" else None
    try:
        return ExperimentConfig(
            synth=synth, trace_path=None if synth else t["source"], block_size=t["block_size"],
            window_len_us=f["window_us"], num_windows=_num_windows(cfg), horizon=f["horizon"],
            archs=archs, train=_train_config(cfg), seeds=tuple(ex["seeds"]),
            capacities=tuple(ex["capacities"]), prefetch_budget=ex["prefetch_budget"],
            demote_threshold=ex["demote_threshold"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_report(args, cfg):
    ecfg = experiment_config(cfg)
    report = run_experiment(ecfg)
    out = write_report(report, args.out_dir)
    sys.stdout.write(format_table1(report, "text"))
    for c in ecfg.capacities:
        lru = report.baseline("LRU", c).hit_rate
        print(f"capacity {c}: LRU hit_rate={lru:.4f}" + "".join(
            f" {k.display}={report.mean_hit_rate(k, c):.4f}" for k in report.aggregates))
    print(f"wrote {out}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="cachecast", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (default: off)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, flags, func, help):
        p = sub.add_parser(name, help=help, description=help, formatter_class=fmt)
        p.add_argument("--config", help="TOML config file (default: none)")
        _add_flags(p, flags)
        p.set_defaults(func=func, flags=flags)
        return p

    p = add("gen", GEN_FLAGS, cmd_gen, "generate a synthetic trace in canonical CSV form")
    p.add_argument("-o", "--output", required=True, help="output trace path (required)")

    p = add("stats", STATS_FLAGS, cmd_stats, "print summary statistics of a trace")
    p.add_argument("--trace", required=True, help="trace file, canonical or MSR, optionally gzip (required)")

    p = add("featurize", FEATURIZE_FLAGS, cmd_featurize, "write per-block feature/label CSVs")
    p.add_argument("--trace", required=True, help="trace file (required)")
    p.add_argument("-o", "--output", required=True, help="output directory (required)")

    p = add("train", TRAIN_FLAGS, cmd_train, "train one learned predictor and save a checkpoint")
    p.add_argument("--arch", required=True, choices=[k.value for k in Kind], help="architecture (required)")
    p.add_argument("--trace", required=True, help="trace file (required)")
    p.add_argument("-o", "--output", required=True, help="checkpoint path (required)")
    p.add_argument("--loss-csv", help="loss-curve CSV path (default: <output>.loss.csv)")
    p.add_argument("--plot", help="optional SVG loss plot path (default: none)")

    p = add("simulate", SIM_FLAGS, cmd_simulate, "replay a trace through a cache policy")
    p.add_argument("--trace", required=True, help="trace file (required)")
    p.add_argument("--model", help="checkpoint for --policy predictive (default: none)")
    p.add_argument("-o", "--output", help="report CSV path (default: stdout)")
    p.add_argument("--timeline", help="per-window hit-rate CSV path (default: none)")

    p = add("report", REPORT_FLAGS, cmd_report, "run the full model comparison and write reports")
    p.add_argument("--out-dir", default="results", help="report directory (default: results)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_cfg = load_config_file(args.config) if args.config else {}
        cfg = resolve(file_cfg, args, args.flags)
        args.func(args, cfg)
    except (UsageError, ConfigError, ZeroCapacity, HeuristicModelNotTrainable) as exc:
        print(f"cachecast {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        code = 2 if isinstance(exc.cause, ConfigError) else 1
        print(f"cachecast {args.command}: error: {exc}", file=sys.stderr)
        return code
    except (CachecastError, OSError) as exc:
        print(f"cachecast {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
