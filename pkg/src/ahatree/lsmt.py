"""Leveled LSM component: a memtable over level 0 (overlapping files) over
levels 1..k of pairwise disjoint sorted files.

Every buffer in the tree (root or node) is one of these.  Level capacities
derive geometrically from the component's byte budget, deepest level largest.
Compaction and range drains do their heavy work against immutable file
caches and install results under a short lock, so readers are never blocked
for the duration of a rewrite.
"""

from __future__ import annotations

import os
import threading
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

from .core import Config, Entry, Key, KeyRange
from .memtable import MemTable
from .merge import merge_entries
from .sstable import SstMeta, payload_bytes, sst_delete, sst_write

# Level 0 collects raw memtable flushes and may hold overlapping files, but
# scans pay for every one of them, so its file count is capped.
L0_FILE_CAP = 8


@dataclass
class CompactionStats:
    """Shared across all components of one index."""

    size_compactions: int = 0
    seek_compactions: int = 0
    bytes_rewritten: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def count(self, kind: str, rewritten: int) -> None:
        with self._lock:
            if kind == "size":
                self.size_compactions += 1
            elif kind == "seek":
                self.seek_compactions += 1
            self.bytes_rewritten += rewritten


class DrainPlan:
    """A prepared range drain: data captured, nothing removed yet.

    The caller pushes .hot (and .cold) wherever they belong, then commits.
    Committing removes exactly the captured snapshot, so writes that raced
    the preparation survive.  Aborting deletes the replacement files and
    leaves the component untouched.
    """

    __slots__ = ("handle", "hot", "cold", "victims", "replacements", "mem_hot", "done")

    def __init__(self, handle, hot, cold, victims, replacements, mem_hot):
        self.handle = handle
        self.hot: List[Entry] = hot
        self.cold: List[Entry] = cold
        self.victims: List[Tuple[int, SstMeta]] = victims
        self.replacements: List[Tuple[int, SstMeta]] = replacements
        self.mem_hot: List[Entry] = mem_hot
        self.done = False

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.handle._drain_commit(self)
        else:
            self.handle._drain_abort(self)
        return False


class LsmtHandle:
    def __init__(
        self,
        directory: Path,
        node_id: int,
        byte_budget: int,
        cfg: Config,
        file_ids,
        stats: Optional[CompactionStats] = None,
    ):
        self.dir = Path(directory)
        self.node_id = node_id
        self.byte_budget = byte_budget
        self.cfg = cfg
        self._file_ids = file_ids
        self.stats = stats if stats is not None else CompactionStats()
        self.mem = MemTable(cfg.memtable_limit)
        # Levels are tuples and only ever replaced wholesale; a reader that
        # grabbed a reference keeps a consistent view for free.
        self.levels: List[Tuple[SstMeta, ...]] = [()]
        # Parallel min_key tuples so sorted levels can be bisected per scan.
        self.level_mins: List[Tuple[Key, ...]] = [()]
        self.total_bytes = 0
        self.lock = threading.Lock()
        self.work_lock = threading.Lock()
        self.seeks_charged = 0
        # Racy scheduling hint: set by any mutation that could arm a
        # compaction trigger, cleared when an evaluation finds nothing.
        # Lets the maintenance scan skip idle components without locks.
        self.work_hint = True

    # ------------------------------------------------------------- writes

    def put(self, e: Entry) -> bool:
        """Insert one entry; returns True when the component is over budget."""
        with self.lock:
            if self.mem.put(e):
                self._flush_locked()
            return self.total_bytes + self.mem.approx_bytes > self.byte_budget

    def put_batch(self, entries: Iterable[Entry]) -> bool:
        """Insert many entries under one lock acquisition.

        Tolerates entries that are staler than a resident version (possible
        when a drained snapshot races fresher writes): the resident wins.
        """
        with self.lock:
            mem = self.mem
            for e in entries:
                mem.merge_put(e)
                if mem.approx_bytes >= mem.capacity:
                    self._flush_locked()
            return self.total_bytes + self.mem.approx_bytes > self.byte_budget

    def overflowing(self) -> bool:
        with self.lock:
            return self.total_bytes + self.mem.approx_bytes > self.byte_budget

    def over_budget_fast(self) -> bool:
        # lock-free peek for the maintenance scheduler; anything acting on
        # the answer re-verifies under the proper locks
        return self.total_bytes + self.mem.approx_bytes > self.byte_budget

    def _flush_locked(self) -> None:
        entries = self.mem.freeze_drain()
        if not entries:
            return
        meta = self._write_file(0, entries)
        self.levels[0] = self.levels[0] + (meta,)
        self.total_bytes += meta.byte_size
        self.work_hint = True
        self._write_manifest_locked()

    def flush_memtable(self) -> None:
        """Force the memtable down to level 0 regardless of fill."""
        with self.lock:
            self._flush_locked()

    def bulk_install(self, entries: Sequence[Entry], level: int = 1) -> None:
        """Seed a fresh component with one sorted unique run at the given level."""
        if not entries:
            return
        meta = self._write_file(level, entries)
        with self.lock:
            while len(self.levels) <= level:
                self.levels.append(())
            self.levels[level] = tuple(sorted(self.levels[level] + (meta,), key=lambda m: m.min_key))
            self.total_bytes += meta.byte_size
            self.work_hint = True
            self._write_manifest_locked()

    def _write_file(self, level: int, entries: Sequence[Entry]) -> SstMeta:
        fid = next(self._file_ids)
        path = self.dir / f"L{level}" / f"{fid}.sst"
        return sst_write(path, fid, entries, self.cfg.seek_allowance_per_file)

    # -------------------------------------------------------------- reads

    def scan_slices(self, r: KeyRange, charge_seeks: bool = True):
        return self.scan_slices_span(r.lo, r.hi_excl, charge_seeks)

    def scan_slices_span(self, lo: Key, hi_excl: Optional[Key], charge_seeks: bool = True):
        """Ascending per-source slices overlapping [lo, hi_excl), memtable first.

        Returns (slices, files_touched); the list is empty when the whole
        component is.  Seek charges land on every file whose bounds overlap
        the span, mirroring the cost of visiting it.
        """
        if self.total_bytes == 0 and not self.mem.overlaps_span(lo, hi_excl):
            # completed writes are visible through these reads; a racing
            # in-flight put may legitimately order after this scan
            return [], 0
        touched = 0
        with self.lock:
            slices = [self.mem.scan_span(lo, hi_excl)]
            for li, level in enumerate(self.levels):
                if not level:
                    continue
                if li == 0:
                    window = level           # overlapping files, check all
                else:
                    # disjoint and sorted: only a bisected window can overlap
                    mins = self.level_mins[li]
                    i = max(bisect_left(mins, lo) - 1, 0)
                    j = bisect_left(mins, hi_excl, i) if hi_excl is not None else len(level)
                    window = level[i:j]
                for m in window:
                    if not m.overlaps_span(lo, hi_excl):
                        continue
                    if charge_seeks:
                        m.seeks_remaining -= 1
                        if m.seeks_remaining == 0:
                            self.work_hint = True
                    touched += 1
                    slices.append(m.slice_span(lo, hi_excl))
            if charge_seeks:
                self.seeks_charged += touched
        return slices, touched

    def scan(self, r: KeyRange) -> List[Entry]:
        slices, _ = self.scan_slices(r)
        return merge_entries(slices)

    def has_data_in_span(self, lo: Key, hi_excl: Optional[Key]) -> bool:
        """Exact membership probe: any resident key in [lo, hi_excl)?"""
        if self.total_bytes == 0 and not self.mem.overlaps_span(lo, hi_excl):
            return False
        with self.lock:
            if self.mem.has_key_in_span(lo, hi_excl):
                return True
            for level in self.levels:
                for m in level:
                    if not m.overlaps_span(lo, hi_excl):
                        continue
                    i = bisect_left(m.keys, lo)
                    if i < len(m.keys) and (hi_excl is None or m.keys[i] < hi_excl):
                        return True
        return False

    def all_versions(self):
        """(key, seq) pairs for every resident version, for invariant checks."""
        with self.lock:
            mem_items = self.mem.scan_span(b"\x00", None)
            levels = list(self.levels)
        for e in mem_items:
            yield e.key, e.seq
        for level in levels:
            for m in level:
                for e in m.entries:
                    yield e.key, e.seq

    def file_count(self) -> int:
        with self.lock:
            return sum(len(level) for level in self.levels)

    def is_empty(self) -> bool:
        with self.lock:
            return not self.mem and self.total_bytes == 0

    # -------------------------------------------------------- compaction

    def maybe_compact(self) -> bool:
        """Run at most one compaction; returns whether anything happened."""
        if not self.work_hint:
            return False
        with self.work_lock:
            # clear before evaluating: a mutation racing in re-arms it
            self.work_hint = False
            pick = self._pick_compaction()
            if pick is None:
                return False
            kind, level_i, victims = pick
            self._run_compaction(kind, level_i, victims)
            return True

    def _deepest_nonempty(self, levels) -> int:
        k = 0
        for i, lvl in enumerate(levels):
            if lvl:
                k = i
        return k

    def _level_capacity(self, i: int, k: int) -> int:
        return self.byte_budget // (self.cfg.level_size_ratio ** (k - i))

    def _pick_compaction(self):
        with self.lock:
            levels = [tuple(lvl) for lvl in self.levels]
        k = self._deepest_nonempty(levels)
        l0 = levels[0]
        # size triggers, shallow first
        if len(l0) > L0_FILE_CAP or (k >= 1 and l0 and _level_bytes(l0) > self._level_capacity(0, k)):
            return ("size", 0, self._expand_l0(l0))
        for i in range(1, k):
            lvl = levels[i]
            if lvl and _level_bytes(lvl) > self._level_capacity(i, k):
                victim = min(lvl, key=lambda m: m.file_id)
                return ("size", i, [victim])
        if self.cfg.seek_compaction_enabled:
            # deepest sorted level has nowhere cheaper to go, but a worn
            # level-0 file always benefits from moving down
            for i in range(0, max(k, 1)):
                worn = [m for m in levels[i] if m.seeks_remaining <= 0]
                if worn:
                    victim = min(worn, key=lambda m: m.file_id)
                    if i == 0:
                        return ("seek", 0, self._expand_l0_from(levels[0], victim))
                    return ("seek", i, [victim])
        return None

    def _expand_l0(self, l0):
        if not l0:
            return []
        oldest = min(l0, key=lambda m: m.file_id)
        return self._expand_l0_from(l0, oldest)

    def _expand_l0_from(self, l0, seed):
        # Level-0 files overlap each other, and pushing one down past a
        # sibling that holds a fresher version of the same key would invert
        # level freshness.  Take the overlap closure instead.
        chosen = {seed.file_id: seed}
        lo, hi = seed.min_key, seed.max_key
        grew = True
        while grew:
            grew = False
            for m in l0:
                if m.file_id in chosen:
                    continue
                if m.min_key <= hi and lo <= m.max_key:
                    chosen[m.file_id] = m
                    lo, hi = min(lo, m.min_key), max(hi, m.max_key)
                    grew = True
        return list(chosen.values())

    def force_compact_level(self, level_i: int) -> int:
        """Merge an entire level into the one below it, uncounted in the
        compaction stats (structural reorganisation, not write-path work).
        Returns the payload bytes rewritten."""
        with self.work_lock:
            with self.lock:
                victims = list(self.levels[level_i]) if level_i < len(self.levels) else []
            if not victims:
                return 0
            return self._run_compaction(None, level_i, victims)

    def _run_compaction(self, kind: Optional[str], level_i: int, victims: List[SstMeta]) -> int:
        lo = min(m.min_key for m in victims)
        hi = max(m.max_key for m in victims)
        with self.lock:
            below = self.levels[level_i + 1] if level_i + 1 < len(self.levels) else ()
        overlapped = [m for m in below if m.min_key <= hi and lo <= m.max_key]

        merged = merge_entries([m.entries for m in victims] + [m.entries for m in overlapped])
        out_meta = self._write_file(level_i + 1, merged)
        if kind is not None:
            self.stats.count(kind, payload_bytes(merged))

        dead_ids = {m.file_id for m in victims} | {m.file_id for m in overlapped}
        with self.lock:
            while len(self.levels) <= level_i + 1:
                self.levels.append(())
            self.levels[level_i] = tuple(m for m in self.levels[level_i] if m.file_id not in dead_ids)
            kept = [m for m in self.levels[level_i + 1] if m.file_id not in dead_ids]
            kept.append(out_meta)
            kept.sort(key=lambda m: m.min_key)
            self.levels[level_i + 1] = tuple(kept)
            self._trim_levels_locked()
            self._recount_locked()
            self.work_hint = True   # the output level may itself be over now
            self._write_manifest_locked()
        for m in victims:
            sst_delete(m)
        for m in overlapped:
            sst_delete(m)
        return payload_bytes(merged)

    # ------------------------------------------------------------- drains

    def drain(self, lo: Key, hi_excl: Optional[Key], coflush: bool = False) -> DrainPlan:
        """Prepare removal of every entry with key in [lo, hi_excl).

        plan.hot holds the newest version per in-range key.  With
        coflush=False out-of-range residue of straddling files is rewritten
        in place and plan.cold is empty; with coflush=True straddling files
        are captured whole and their out-of-range residue is returned as
        plan.cold for the caller to relocate.  The component is mutated only
        when the plan commits (context-manager exit without an exception).
        """
        self.work_lock.acquire()
        try:
            return self._drain_prepare(lo, hi_excl, coflush)
        except BaseException:
            self.work_lock.release()
            raise

    def drain_now(self, r: KeyRange) -> List[Entry]:
        """Immediate in-place drain of an inclusive range."""
        with self.drain(r.lo, r.hi_excl) as plan:
            pass
        return plan.hot

    def _drain_prepare(self, lo, hi_excl, coflush) -> DrainPlan:
        with self.lock:
            mem_hot = self.mem.scan_span(lo, hi_excl)
            levels = [tuple(lvl) for lvl in self.levels]

        victims: List[Tuple[int, SstMeta]] = []
        hot_slices: List[Sequence[Entry]] = [mem_hot]
        cold_pool: List[Entry] = []
        replacements: List[Tuple[int, SstMeta]] = []

        for li, level in enumerate(levels):
            for m in level:
                if not m.overlaps_span(lo, hi_excl):
                    continue
                victims.append((li, m))
                i = bisect_left(m.keys, lo)
                j = bisect_left(m.keys, hi_excl, i) if hi_excl is not None else len(m.keys)
                hot_slices.append(m.entries[i:j])
                left, right = m.entries[:i], m.entries[j:]
                if coflush:
                    cold_pool.extend(left)
                    cold_pool.extend(right)
                else:
                    for run in (left, right):
                        if run:
                            replacements.append((li, self._write_file(li, run)))

        hot = merge_entries(hot_slices)
        cold: List[Entry] = []
        if cold_pool:
            cold_pool.sort(key=_key_then_seq_desc)
            dedup = [e for i, e in enumerate(cold_pool) if i == 0 or e.key != cold_pool[i - 1].key]
            cold, kept = self._split_coflush(dedup, victims, levels, lo, hi_excl)
            for li, run in kept:
                replacements.append((li, self._write_file(li, run)))
        return DrainPlan(self, hot, cold, victims, replacements, mem_hot)

    def _split_coflush(self, cold_candidates, victims, levels, lo, hi_excl):
        """Decide which cold entries may actually move down a level.

        If every surviving version of a cold key in this component is staler
        than the candidate, pushing the candidate to a child would leave the
        child holding something fresher than this node, inverting the
        per-path freshness order.  Such keys stay here, rewritten at level 0.
        """
        victim_ids = {m.file_id for _, m in victims}
        survivor_max: dict = {}
        c_lo = cold_candidates[0].key
        c_hi = cold_candidates[-1].key
        cold_keys = {e.key for e in cold_candidates}
        for level in levels:
            for m in level:
                if m.file_id in victim_ids:
                    continue
                if m.max_key < c_lo or m.min_key > c_hi:
                    continue
                i = bisect_left(m.keys, c_lo)
                j = bisect_right(m.keys, c_hi, i)
                for e in m.entries[i:j]:
                    if e.key in cold_keys and e.seq > survivor_max.get(e.key, -1):
                        survivor_max[e.key] = e.seq
        movable: List[Entry] = []
        stay: List[Entry] = []
        for e in cold_candidates:
            if survivor_max.get(e.key, -1) > e.seq:
                movable.append(e)  # a fresher copy remains above, order safe
            elif e.key in survivor_max:
                stay.append(e)
            else:
                movable.append(e)
        # Rewrite stayers as separate runs on each side of the drained span so
        # no replacement file's bounds straddle it.
        kept_runs: List[Tuple[int, List[Entry]]] = []
        stay_left = [e for e in stay if e.key < lo]
        stay_right = [e for e in stay if e.key >= lo]
        for run in (stay_left, stay_right):
            if run:
                kept_runs.append((0, run))
        return movable, kept_runs

    def _drain_commit(self, plan: DrainPlan) -> None:
        try:
            dead_ids = {m.file_id for _, m in plan.victims}
            with self.lock:
                for li, meta in plan.replacements:
                    while len(self.levels) <= li:
                        self.levels.append(())
                for li in range(len(self.levels)):
                    kept = [m for m in self.levels[li] if m.file_id not in dead_ids]
                    adds = [meta for rl, meta in plan.replacements if rl == li]
                    if adds:
                        kept.extend(adds)
                        kept.sort(key=lambda m: m.min_key)
                    self.levels[li] = tuple(kept)
                self.mem.remove_exact(plan.mem_hot)
                self._trim_levels_locked()
                self._recount_locked()
                if plan.replacements:
                    self.work_hint = True   # stay-run rewrites can grow L0
                self._write_manifest_locked()
            for _, m in plan.victims:
                sst_delete(m)
            plan.done = True
        finally:
            self.work_lock.release()

    def _drain_abort(self, plan: DrainPlan) -> None:
        try:
            for _, meta in plan.replacements:
                sst_delete(meta)
        finally:
            self.work_lock.release()

    # ---------------------------------------------------------- plumbing

    def _trim_levels_locked(self) -> None:
        while len(self.levels) > 1 and not self.levels[-1]:
            self.levels.pop()

    def _recount_locked(self) -> None:
        self.total_bytes = sum(m.byte_size for lvl in self.levels for m in lvl)

    def _write_manifest_locked(self) -> None:
        # every level mutation funnels through here, so the bisect index
        # stays in step with the levels themselves
        self.level_mins = [tuple(m.min_key for m in lvl) for lvl in self.levels]
        lines = []
        for li, level in enumerate(self.levels):
            for m in level:
                lines.append(f"{li} {m.file_id} {m.min_key.hex()} {m.max_key.hex()}\n")
        self.dir.mkdir(parents=True, exist_ok=True)
        tmp = self.dir / "MANIFEST.tmp"
        tmp.write_text("".join(lines))
        os.replace(tmp, self.dir / "MANIFEST")

    def destroy_files(self) -> None:
        """Delete every file owned by this component (it is being replaced)."""
        with self.lock:
            metas = [m for lvl in self.levels for m in lvl]
            self.levels = [()]
            self.level_mins = [()]
            self.total_bytes = 0
        for m in metas:
            sst_delete(m)


def _key_then_seq_desc(e: Entry):
    return (e.key, -e.seq)


def _level_bytes(level) -> int:
    return sum(m.byte_size for m in level)


def lsmt_scan(h: LsmtHandle, r: KeyRange) -> List[Entry]:
    return h.scan(r)


def lsmt_drain_range(h: LsmtHandle, r: KeyRange) -> List[Entry]:
    return h.drain_now(r)
