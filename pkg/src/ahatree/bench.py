"""Benchmark harness: drives any of the three indexes through a workload.

One driver class per index gives the harness a single surface: load, arm,
put/scan, one background work unit (tick), quiesce, fraction and counters.
The run loop times every foreground op, emits one metrics window per fixed
op count, and polls the adaptation fraction at a fine grain so completion
op-indexes are sharper than the window size.

Background work runs either on a worker thread (default, realistic) or
inline after each foreground op (deterministic scheduling for tests).
"""

from __future__ import annotations

import hashlib
import random
import threading
import time
from dataclasses import dataclass
from math import ceil
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .adaptation import AdaptationEngine
from .baselines import BPlusTreeIndex, PlainLsmIndex
from .core import MAX_KEY, MIN_KEY, Config, Entry, KeyRange, encode_key
from .tree import AhaTree
from .workload import (
    PutOp,
    ScanOp,
    WorkloadSpec,
    gen_ops,
    hotspot_range,
    load_ops,
    validate_spec,
)

EVERYTHING = KeyRange(MIN_KEY, MAX_KEY)

CSV_HEADER = ("window_end_op,phase,throughput_ops_s,p50_us,p99_us,"
              "adapt_fraction,size_compactions,seek_compactions,"
              "entries_flushed,pages_created")


@dataclass
class MetricsWindow:
    window_end_op: int
    phase: str
    throughput_ops_s: float
    p50_us: float
    p99_us: float
    adapt_fraction: float
    size_compactions: int
    seek_compactions: int
    entries_flushed: int
    pages_created: int


@dataclass
class BenchReport:
    index: str
    total_ops: int
    elapsed_s: float
    checksum: int
    windows: List[MetricsWindow]
    phase_mean_throughput: List[Tuple[str, float]]
    adapt_complete_op: Optional[int]
    # per phase: op offset within the phase where the adaptation queue last
    # went all-complete, and the lowest fraction polled during the phase
    phase_adapt_complete: List[Optional[int]]
    phase_min_fraction: List[float]
    reader_errors: int = 0
    op_log: Optional[List[Tuple[int, int, str, int, int]]] = None
    step_log: Optional[List[Tuple[int, int]]] = None


def scan_checksum(entries: Iterable[Entry]) -> int:
    """Order-sensitive 64-bit digest of (key, value) pairs."""
    h = hashlib.blake2b(digest_size=8)
    for e in entries:
        h.update(len(e.key).to_bytes(4, "little"))
        h.update(e.key)
        h.update(len(e.value).to_bytes(4, "little"))
        h.update(e.value)
    return int.from_bytes(h.digest(), "little")


# ------------------------------------------------------------------ drivers

LOAD_TICK_EVERY = 16


class AhaDriver:
    kind = "aha"

    def __init__(self, data_dir, cfg: Config, hotspot: Optional[KeyRange]):
        self.tree = AhaTree(data_dir, cfg)
        self.hotspot = hotspot
        self.engine: Optional[AdaptationEngine] = None
        self.step_log: List[Tuple[int, int]] = []
        self.record_steps = False

    def load(self, pairs) -> None:
        for i, (k, v) in enumerate(pairs):
            self.tree.put(k, v)
            if i % LOAD_TICK_EVERY == 0:
                self.tree.maintenance_step()
        self.tree.quiesce()

    def arm(self) -> None:
        # armed after load so adaptation cost lands in the measured phases
        self.engine = AdaptationEngine(self.tree, hotspot=self.hotspot)

    def put(self, key: bytes, value: bytes) -> None:
        self.tree.put(key, value)

    def scan(self, r: KeyRange) -> List[Entry]:
        return self.tree.scan(r)

    def tick(self) -> bool:
        if self.tree.maintenance_step():
            return True
        if self.engine is None:
            return False
        if not self.record_steps:
            return self.engine.adapt_step()
        t0 = time.perf_counter_ns()
        worked = self.engine.adapt_step()
        if worked:
            self.step_log.append((t0, time.perf_counter_ns()))
        return worked

    def quiesce(self) -> None:
        self.tree.quiesce()

    def fraction(self) -> float:
        return self.engine.progress()[0] if self.engine else 1.0

    def adapt_idle(self) -> bool:
        return self.engine.idle() if self.engine else True

    def counters(self) -> Dict[str, int]:
        s = self.tree.stats
        out = {"size_compactions": s.size_compactions,
               "seek_compactions": s.seek_compactions,
               "entries_flushed": 0,
               "pages_created": self.tree.pages_created,
               "page_splits": self.tree.page_splits}
        if self.engine is not None:
            out["entries_flushed"] = self.engine.stats().entries_flushed
        return out

    def full_entries(self) -> List[Entry]:
        return self.tree.scan(EVERYTHING)


class BtreeDriver:
    kind = "btree"

    def __init__(self, data_dir, cfg: Config, hotspot: Optional[KeyRange]):
        self.index = BPlusTreeIndex(data_dir, cfg)

    def load(self, pairs) -> None:
        ordered = sorted(pairs)
        self.index.bulk_load(
            [Entry(k, v, i + 1) for i, (k, v) in enumerate(ordered)])

    def arm(self) -> None:
        pass

    def put(self, key: bytes, value: bytes) -> None:
        self.index.put(key, value)

    def scan(self, r: KeyRange) -> List[Entry]:
        return self.index.scan(r)

    def tick(self) -> bool:
        return self.index.maintenance_step()

    def quiesce(self) -> None:
        self.index.quiesce()

    def fraction(self) -> float:
        return 1.0

    def adapt_idle(self) -> bool:
        return True

    def counters(self) -> Dict[str, int]:
        return self.index.counters()

    def full_entries(self) -> List[Entry]:
        return self.index.scan(EVERYTHING)


class LsmDriver:
    kind = "lsm"

    def __init__(self, data_dir, cfg: Config, hotspot: Optional[KeyRange]):
        self.index = PlainLsmIndex(data_dir, cfg)

    def load(self, pairs) -> None:
        for i, (k, v) in enumerate(pairs):
            self.index.put(k, v)
            if i % LOAD_TICK_EVERY == 0:
                self.index.maintenance_step()
        self.index.quiesce()

    def arm(self) -> None:
        pass

    def put(self, key: bytes, value: bytes) -> None:
        self.index.put(key, value)

    def scan(self, r: KeyRange) -> List[Entry]:
        return self.index.scan(r)

    def tick(self) -> bool:
        return self.index.maintenance_step()

    def quiesce(self) -> None:
        self.index.quiesce()

    def fraction(self) -> float:
        return 1.0

    def adapt_idle(self) -> bool:
        return True

    def counters(self) -> Dict[str, int]:
        return self.index.counters()

    def full_entries(self) -> List[Entry]:
        return self.index.scan(EVERYTHING)


DRIVERS = {"aha": AhaDriver, "btree": BtreeDriver, "lsm": LsmDriver}


def build_driver(index: str, data_dir, cfg: Config,
                 hotspot: Optional[KeyRange] = None):
    try:
        cls = DRIVERS[index]
    except KeyError:
        raise ValueError(f"unknown index {index!r}") from None
    return cls(data_dir, cfg, hotspot)


# ----------------------------------------------------------------- run loop

def _percentile(sorted_us: Sequence[float], q: float) -> float:
    """Nearest-rank percentile; input must be sorted ascending."""
    if not sorted_us:
        return 0.0
    rank = max(1, ceil(q * len(sorted_us)))
    return sorted_us[min(rank, len(sorted_us)) - 1]


def _background(driver, stop: threading.Event) -> None:
    while not stop.is_set():
        if not driver.tick():
            time.sleep(0.0005)


def _reader_loop(driver, spec: WorkloadSpec, j: int, stop: threading.Event,
                 errors: List[int]) -> None:
    rng = random.Random(f"{spec.seed}:reader{j}")
    lo, hi = spec.hotspot if spec.hotspot else (0, spec.key_domain - 1)
    width = spec.scan_size
    while not stop.is_set():
        start = rng.randint(lo, hi)
        try:
            driver.scan(KeyRange(encode_key(start),
                                 encode_key(min(start + width - 1,
                                                spec.key_domain - 1))))
        except Exception:
            errors.append(1)
            return


def run_bench(spec: WorkloadSpec, index: str, cfg: Config, data_dir, *,
              window: int = 10_000, mode: str = "thread", readers: int = 0,
              record_ops: bool = False, poll_every: int = 128) -> BenchReport:
    validate_spec(spec)
    if mode not in ("thread", "inline"):
        raise ValueError(f"unknown mode {mode!r}")
    driver = build_driver(index, data_dir, cfg, hotspot_range(spec))
    driver.load(load_ops(spec))
    driver.arm()
    if record_ops and hasattr(driver, "record_steps"):
        driver.record_steps = True

    stop = threading.Event()
    worker = None
    reader_threads = []
    reader_errors: List[int] = []
    if mode == "thread":
        worker = threading.Thread(target=_background, args=(driver, stop),
                                  daemon=True)
        worker.start()
    for j in range(readers):
        t = threading.Thread(target=_reader_loop,
                             args=(driver, spec, j, stop, reader_errors),
                             daemon=True)
        reader_threads.append(t)
        t.start()

    phase_start_op = []
    at = 0
    for p in spec.phases:
        phase_start_op.append(at)
        at += p.ops
    total_ops = at

    windows: List[MetricsWindow] = []
    lat_us: List[float] = []
    op_log: List[Tuple[int, int, str, int, int]] = []
    phase_complete: List[Optional[int]] = [None] * len(spec.phases)
    phase_minfrac: List[float] = [1.0] * len(spec.phases)
    adapt_complete_op: Optional[int] = None
    last_frac = driver.fraction()
    t_start = time.perf_counter()
    win_start = t_start

    def poll(op_index: int, phase: int) -> float:
        nonlocal last_frac
        f = driver.fraction()
        if f < phase_minfrac[phase]:
            phase_minfrac[phase] = f
        last_frac = f
        return f

    # adaptation completion is tracked exactly: the op where the engine's
    # queue last went all-complete, sampled once per foreground op
    last_idle = driver.adapt_idle()

    for i, op in enumerate(gen_ops(spec), 1):
        t0 = time.perf_counter_ns()
        if isinstance(op, PutOp):
            driver.put(op.key, op.value)
            op_kind = "put"
        else:
            driver.scan(op.r)
            op_kind = "scan"
        t1 = time.perf_counter_ns()
        lat_us.append((t1 - t0) / 1000.0)
        if record_ops:
            op_log.append((i, op.phase, op_kind, t0, t1))
        if mode == "inline":
            driver.tick()
        idle = driver.adapt_idle()
        if idle and not last_idle:
            if adapt_complete_op is None:
                adapt_complete_op = i
            phase_complete[op.phase] = i - phase_start_op[op.phase]
        last_idle = idle
        if i % poll_every == 0:
            poll(i, op.phase)
        if i % window == 0 or i == total_ops:
            frac = poll(i, op.phase)
            now = time.perf_counter()
            lat_us.sort()
            c = driver.counters()
            windows.append(MetricsWindow(
                window_end_op=i,
                phase=spec.phases[op.phase].kind,
                throughput_ops_s=len(lat_us) / max(now - win_start, 1e-9),
                p50_us=_percentile(lat_us, 0.50),
                p99_us=_percentile(lat_us, 0.99),
                adapt_fraction=frac,
                size_compactions=c["size_compactions"],
                seek_compactions=c["seek_compactions"],
                entries_flushed=c["entries_flushed"],
                pages_created=c["pages_created"],
            ))
            lat_us = []
            win_start = now

    stop.set()
    if worker is not None:
        worker.join()
    for t in reader_threads:
        t.join()
    driver.quiesce()
    elapsed = time.perf_counter() - t_start
    checksum = scan_checksum(driver.full_entries())

    phase_means: List[Tuple[str, float]] = []
    for pi, p in enumerate(spec.phases):
        ws = [w for w in windows
              if phase_start_op[pi] < w.window_end_op
              <= phase_start_op[pi] + p.ops]
        mean = sum(w.throughput_ops_s for w in ws) / len(ws) if ws else 0.0
        phase_means.append((p.kind, mean))

    return BenchReport(
        index=index,
        total_ops=total_ops,
        elapsed_s=elapsed,
        checksum=checksum,
        windows=windows,
        phase_mean_throughput=phase_means,
        adapt_complete_op=adapt_complete_op,
        phase_adapt_complete=phase_complete,
        phase_min_fraction=phase_minfrac,
        reader_errors=len(reader_errors),
        op_log=op_log if record_ops else None,
        step_log=getattr(driver, "step_log", None) if record_ops else None,
    )


# ------------------------------------------------------------------ emitters

def _row(w: MetricsWindow) -> List[str]:
    return [str(w.window_end_op), w.phase, repr(w.throughput_ops_s),
            repr(w.p50_us), repr(w.p99_us), repr(w.adapt_fraction),
            str(w.size_compactions), str(w.seek_compactions),
            str(w.entries_flushed), str(w.pages_created)]


def emit_csv(windows: Sequence[MetricsWindow], path) -> None:
    lines = [CSV_HEADER] + [",".join(_row(w)) for w in windows]
    Path(path).write_text("\n".join(lines) + "\n")


def emit_plot_data(windows: Sequence[MetricsWindow], path) -> None:
    lines = ["# " + CSV_HEADER.replace(",", " ")]
    lines += [" ".join(_row(w)) for w in windows]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_csv(path) -> List[MetricsWindow]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("unrecognized CSV header")
    out = []
    for line in lines[1:]:
        f = line.split(",")
        out.append(MetricsWindow(
            window_end_op=int(f[0]), phase=f[1],
            throughput_ops_s=float(f[2]), p50_us=float(f[3]),
            p99_us=float(f[4]), adapt_fraction=float(f[5]),
            size_compactions=int(f[6]), seek_compactions=int(f[7]),
            entries_flushed=int(f[8]), pages_created=int(f[9])))
    return out
