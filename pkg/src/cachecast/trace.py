"""Block-trace ingestion: MSR Cambridge CSV parsing, canonical trace I/O and a
seeded synthetic workload generator.

MSR lines look like::

    128166372003061629,src1,0,Read,8192,4096,58

i.e. ``Timestamp,Hostname,DiskNumber,Type,Offset,Size,ResponseTime`` where the
timestamp and response time are Windows FILETIME ticks (100 ns).
"""

from __future__ import annotations

import enum
import gzip
import io
import os
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import EmptyTrace, MalformedLine

DEFAULT_BLOCK_SIZE = 4096
CANONICAL_HEADER = "timestamp_us,host,op,block_id,size_bytes,latency_us"
_TICKS_PER_US = 10
_GZIP_MAGIC = b"\x1f\x8b"


class Op(enum.Enum):
    Read = "Read"
    Write = "Write"

    @classmethod
    def parse(cls, text: str) -> "Op":
        low = text.strip().lower()
        if low == "read":
            return cls.Read
        if low == "write":
            return cls.Write
        raise ValueError(f"unknown op type {text!r}")


@dataclass(frozen=True)
class AccessRecord:
    timestamp_us: int
    host: str
    op: Op
    block_id: int
    size_bytes: int
    latency_us: int

    def __post_init__(self):
        if self.block_id < 0:
            raise ValueError("block_id must be non-negative")
        if self.size_bytes <= 0:
            raise ValueError("size_bytes must be positive")
        if self.latency_us < 0:
            raise ValueError("latency_us must be non-negative")


@dataclass(frozen=True)
class SynthConfig:
    num_blocks: int = 64
    num_events: int = 50_000
    zipf_alpha: float = 1.0
    period_windows: int = 20
    phase_blocks: int = 8
    seed: int = 7
    block_size: int = DEFAULT_BLOCK_SIZE
    num_windows: int = 200
    window_len_us: int = 1_000_000
    load_amplitude: float = 0.5

    def __post_init__(self):
        for name in ("num_blocks", "num_events", "period_windows", "phase_blocks",
                     "block_size", "num_windows", "window_len_us"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.phase_blocks > self.num_blocks:
            raise ValueError("phase_blocks must not exceed num_blocks")
        if self.zipf_alpha < 0:
            raise ValueError("zipf_alpha must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not 0 <= self.load_amplitude < 1:
            raise ValueError("load_amplitude must lie in [0, 1)")


@dataclass(frozen=True)
class TraceStats:
    num_records: int
    num_blocks: int
    time_span_us: int
    read_fraction: float


def _split_fields(line: str, line_no: int, expected: int) -> list[str]:
    fields = [f.strip() for f in line.split(",")]
    if len(fields) != expected:
        raise MalformedLine(line_no, f"expected {expected} fields, got {len(fields)}")
    return fields


def _to_int(text: str, line_no: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise MalformedLine(line_no, f"non-numeric {what} {text!r}") from None


def parse_msr_csv(lines: Iterable[str], block_size: int = DEFAULT_BLOCK_SIZE) -> list[AccessRecord]:
    """Parse MSR Cambridge trace lines into records sorted by time.

    Timestamps are rebased to microseconds since the earliest record. Blank
    lines and a leading ``Timestamp,...`` header are skipped.
    """
    if block_size <= 0:
        raise ValueError("block_size must be positive")
    raw = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        if line_no == 1 and line.lower().startswith("timestamp"):
            continue
        ts, host, _disk, kind, offset, size, resp = _split_fields(line, line_no, 7)
        ticks = _to_int(ts, line_no, "timestamp")
        _to_int(_disk, line_no, "disk number")
        off = _to_int(offset, line_no, "offset")
        nbytes = _to_int(size, line_no, "size")
        resp_ticks = _to_int(resp, line_no, "response time")
        try:
            op = Op.parse(kind)
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from None
        if off < 0 or nbytes <= 0 or resp_ticks < 0 or ticks < 0:
            raise MalformedLine(line_no, "negative offset/latency or non-positive size")
        raw.append((ticks // _TICKS_PER_US, host, op, off // block_size, nbytes,
                    resp_ticks // _TICKS_PER_US))
    if not raw:
        raise EmptyTrace()
    raw.sort(key=lambda r: r[0])  # stable
    t0 = raw[0][0]
    return [AccessRecord(t - t0, h, op, b, s, lat) for t, h, op, b, s, lat in raw]


def parse_canonical_csv(lines: Iterable[str]) -> list[AccessRecord]:
    """Parse the canonical ``timestamp_us,host,op,block_id,size_bytes,latency_us`` form."""
    records = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        if line_no == 1 and line == CANONICAL_HEADER:
            continue
        ts, host, kind, block, size, lat = _split_fields(line, line_no, 6)
        try:
            op = Op.parse(kind)
            rec = AccessRecord(_to_int(ts, line_no, "timestamp"), host, op,
                               _to_int(block, line_no, "block_id"),
                               _to_int(size, line_no, "size"),
                               _to_int(lat, line_no, "latency"))
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from None
        records.append(rec)
    if not records:
        raise EmptyTrace()
    records.sort(key=lambda r: r.timestamp_us)
    return records


def write_canonical_csv(records: Sequence[AccessRecord], out: IO[str]) -> None:
    out.write(CANONICAL_HEADER + "\n")
    for r in records:
        out.write(f"{r.timestamp_us},{r.host},{r.op.value},{r.block_id},{r.size_bytes},{r.latency_us}\n")


def to_canonical_csv(records: Sequence[AccessRecord]) -> str:
    buf = io.StringIO()
    write_canonical_csv(records, buf)
    return buf.getvalue()


def _open_text(path: str | os.PathLike) -> IO[str]:
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == _GZIP_MAGIC:
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def load_trace(path: str | os.PathLike, block_size: int = DEFAULT_BLOCK_SIZE) -> list[AccessRecord]:
    """Read a trace file in either canonical or MSR form (plain or gzip)."""
    with _open_text(path) as fh:
        lines = fh.read().splitlines()
    first = next((ln.strip() for ln in lines if ln.strip()), "")
    if first == CANONICAL_HEADER:
        return parse_canonical_csv(lines)
    return parse_msr_csv(lines, block_size)


def save_trace(records: Sequence[AccessRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_canonical_csv(records, fh)


def rank_to_block(cfg: SynthConfig, base_perm: np.ndarray, phase: int) -> np.ndarray:
    """Popularity rank -> block id for a given rotation phase.

    The ``phase_blocks`` hottest ranks are filled by a fixed group of blocks
    that rotates one position per phase, so each group member climbs towards
    rank 0 and then falls back to the coldest slot of the group.
    """
    mapping = base_perm.copy()
    p = cfg.phase_blocks
    mapping[:p] = base_perm[(np.arange(p) + phase) % p]
    return mapping


def zipf_probs(num_blocks: int, alpha: float) -> np.ndarray:
    w = 1.0 / np.arange(1, num_blocks + 1, dtype=np.float64) ** alpha
    return w / w.sum()


def window_event_counts(cfg: SynthConfig) -> np.ndarray:
    """Events per window; intensity ramps linearly from ``1 - load_amplitude``
    to ``1 + load_amplitude`` across each rotation period."""
    pos = np.arange(cfg.num_windows) % cfg.period_windows
    ramp = pos / max(cfg.period_windows - 1, 1) * 2.0 - 1.0
    weight = 1.0 + cfg.load_amplitude * ramp
    exact = weight / weight.sum() * cfg.num_events
    counts = np.floor(exact).astype(np.int64)
    short = cfg.num_events - counts.sum()
    # largest remainder, earliest window first on ties
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def generate_synthetic(cfg: SynthConfig) -> list[AccessRecord]:
    """Generate a workload with Zipf popularity skew and periodic hot-set rotation."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    base_perm = rng.permutation(cfg.num_blocks)
    probs = zipf_probs(cfg.num_blocks, cfg.zipf_alpha)

    n = cfg.num_events
    window = np.repeat(np.arange(cfg.num_windows), window_event_counts(cfg))
    ranks = rng.choice(cfg.num_blocks, size=n, p=probs)
    offsets = rng.integers(0, cfg.window_len_us, size=n)
    is_read = rng.random(n) < 0.7
    sizes = rng.choice(np.array([4096, 8192, 16384, 65536]), size=n, p=[0.55, 0.25, 0.15, 0.05])
    jitter = rng.exponential(200.0, size=n)

    num_phases = (cfg.num_windows + cfg.period_windows - 1) // cfg.period_windows
    tables = np.stack([rank_to_block(cfg, base_perm, ph) for ph in range(num_phases)])
    blocks = tables[window // cfg.period_windows, ranks]

    ts = window * cfg.window_len_us + offsets
    order = np.argsort(ts, kind="stable")
    latency = (50 + sizes // 512 + jitter).astype(np.int64)
    return [
        AccessRecord(int(ts[i]), "synth", Op.Read if is_read[i] else Op.Write,
                     int(blocks[i]), int(sizes[i]), int(latency[i]))
        for i in order
    ]


def trace_stats(records: Sequence[AccessRecord]) -> TraceStats:
    if not records:
        raise EmptyTrace()
    times = [r.timestamp_us for r in records]
    reads = sum(1 for r in records if r.op is Op.Read)
    return TraceStats(
        num_records=len(records),
        num_blocks=len({r.block_id for r in records}),
        time_span_us=max(times) - min(times),
        read_fraction=reads / len(records),
    )
