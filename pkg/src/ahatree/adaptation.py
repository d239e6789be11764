"""Background adaptation: morphing hotspot regions into paged form.

Scans report the ranges they touch; those ranges queue up here and a single
background worker chips away at them, one bounded unit per step: drain the
shallowest buffered node still holding in-range data (pushing hot data down
and co-flushing cold data one level with it), or transform one fully-drained
leaf into pages.  A range is complete when no buffer on an overlapping path
holds an in-range key; the root memtable is deliberately exempt, since new
writes keep landing there.
"""

from __future__ import annotations

import threading
from bisect import bisect_left
from dataclasses import dataclass, field
from math import ceil
from typing import Dict, List, Optional, Sequence, Tuple

from .core import MIN_KEY, Entry, Key, KeyRange
from .sstable import payload_bytes
from .tree import INTERNAL, LEAF_BUFFERED, LEAF_PAGED, AhaTree, LeafPage, write_page

QUEUED = "queued"
IN_PROGRESS = "in_progress"
COMPLETE = "complete"

GOLDEN = 0.6180339887


@dataclass
class HotspotRange:
    range: KeyRange
    state: str = QUEUED
    pending_nodes: List[int] = field(default_factory=list)


@dataclass
class AdaptationStats:
    ranges_completed: int = 0
    entries_flushed: int = 0
    pages_created: int = 0
    cold_bytes_coflushed: int = 0
    transform_bytes: int = 0
    page_splits: int = 0


def _fill_fraction(i: int) -> float:
    # low-discrepancy walk over [0.5, 0.9): neighbouring pages never share a
    # fill level, so their future splits cannot synchronize
    return 0.5 + 0.4 * ((i * GOLDEN) % 1.0)


def pack_runs(entries: Sequence[Entry], policy: str, capacity: int):
    """Split an ascending stream into page runs; returns (run, fill) pairs.

    even: ceil(N/capacity) runs with counts differing by at most one.
    sound_remedy: run i takes floor(capacity * f_i) entries following the
    golden-ratio fill schedule, the last run takes whatever remains.
    """
    n = len(entries)
    if n == 0:
        return []
    if policy == "even":
        groups = ceil(n / capacity)
        base, rem = divmod(n, groups)
        runs = []
        at = 0
        for i in range(groups):
            size = base + (1 if i < rem else 0)
            runs.append((entries[at:at + size], size / capacity))
            at += size
        return runs
    runs = []
    at = 0
    i = 0
    while at < n:
        f = _fill_fraction(i)
        take = min(max(int(capacity * f), 1), n - at)
        runs.append((entries[at:at + take], f))
        at += take
        i += 1
    return runs


def pack_pages(entries: Sequence[Entry], policy: str, capacity: int, pages_dir,
               file_ids, seek_floor: int) -> List[LeafPage]:
    return [write_page(pages_dir, file_ids, run, capacity, fill, seek_floor)
            for run, fill in pack_runs(entries, policy, capacity)]


def _key_point(b: Optional[Key]) -> int:
    """Index of the first 8-byte-encoded key not below bound b (None = +inf).

    Turns byte-string bounds into integers so span arithmetic can measure
    progress over the workload's integer key domain.
    """
    if b is None:
        return 1 << 64
    if b == b"":
        return 0
    head = int.from_bytes(b[:8].ljust(8, b"\x00"), "big")
    return head if len(b) <= 8 else head + 1


def _union_measure(intervals: List[Tuple[int, int]]) -> int:
    total = 0
    last_hi = None
    for lo, hi in sorted(intervals):
        if last_hi is None or lo > last_hi:
            total += hi - lo
            last_hi = hi
        elif hi > last_hi:
            total += hi - last_hi
            last_hi = hi
    return total


class AdaptationEngine:
    """One per index; owns the hotspot queue and performs adapt steps."""

    def __init__(self, tree: AhaTree, hotspot: Optional[KeyRange] = None):
        self.tree = tree
        self.cfg = tree.cfg
        self.qlock = threading.Lock()
        self.queue: List[HotspotRange] = []
        self.hotspot = hotspot
        self._probe_tick = 0
        # Racy no-pending-work flag so idle steps cost one attribute read;
        # writers update it under qlock, a stale True lasts one tick.
        self._idle = True
        self.ranges_completed = 0
        self.entries_flushed = 0
        self.cold_bytes_coflushed = 0
        self.transform_bytes = 0
        if self.cfg.adaptation_enabled:
            tree.touch_sink = self.submit_touchset
            if self.cfg.adapt_mode == "eager" and hotspot is not None:
                self.queue.append(HotspotRange(hotspot))
                self._idle = False

    # --------------------------------------------------------------- intake

    def submit_touchset(self, ts) -> None:
        if not self.cfg.adaptation_enabled:
            return
        with self.qlock:
            if self.cfg.adapt_mode == "lazy":
                self._enqueue_locked(ts.range)
            self._probe_tick += 1
            probe = self._probe_tick % 8 == 1
        if probe:
            self._requeue_dirty_completes(ts.range)

    def _enqueue_locked(self, r: KeyRange) -> None:
        for hr in self.queue:
            if hr.state != COMPLETE and hr.range.overlaps(r):
                merged = KeyRange(min(hr.range.lo, r.lo), max(hr.range.hi, r.hi))
                hr.range = merged
                self._coalesce_locked(hr)
                self._idle = False
                return
        for hr in self.queue:
            if hr.state == COMPLETE and hr.range.lo <= r.lo and r.hi <= hr.range.hi:
                return  # covered; dirtiness probing decides whether to redo it
        self.queue.append(HotspotRange(r))
        self._idle = False

    def _coalesce_locked(self, grown: HotspotRange) -> None:
        for other in list(self.queue):
            if other is grown or other.state == COMPLETE:
                continue
            if other.range.overlaps(grown.range):
                grown.range = KeyRange(min(other.range.lo, grown.range.lo),
                                       max(other.range.hi, grown.range.hi))
                self.queue.remove(other)

    def _requeue_dirty_completes(self, touched: Optional[KeyRange] = None) -> None:
        with self.qlock:
            standing = [hr for hr in self.queue if hr.state == COMPLETE
                        and (touched is None or hr.range.overlaps(touched))]
        for hr in standing:
            if self._dirty_nodes(hr.range.lo, hr.range.hi_excl):
                with self.qlock:
                    if hr.state == COMPLETE:
                        hr.state = QUEUED
                        self._idle = False
                self._retract_single_span(hr.range)

    def _retract_single_span(self, r: KeyRange) -> None:
        lo, hi_excl = r.lo, r.hi_excl
        self.tree.single_spans = [s for s in self.tree.single_spans
                                  if not (s[0] == lo and s[1] == hi_excl)]

    # ------------------------------------------------------------ step work

    def adapt_step(self) -> bool:
        """One bounded unit: a node drain, a leaf transform, or a completion."""
        if self._idle:
            return False
        hr = self._front()
        if hr is None:
            return False
        lo, hi_excl = hr.range.lo, hr.range.hi_excl
        hr.state = IN_PROGRESS
        dirty = self._dirty_nodes(lo, hi_excl)
        hr.pending_nodes = dirty
        internals = [nid for nid in dirty if self.tree.nodes[nid].kind == INTERNAL]
        if internals:
            self._drain_node(internals[0], lo, hi_excl)
            return True
        leaves = [nid for nid in dirty if self.tree.nodes[nid].kind == LEAF_BUFFERED]
        if leaves:
            self._transform(leaves[0], lo, hi_excl)
            return True
        with self.qlock:
            hr.state = COMPLETE
            hr.pending_nodes = []
            self.ranges_completed += 1
            self._idle = all(h.state == COMPLETE for h in self.queue)
        spans = [s for s in self.tree.single_spans if s != (lo, hi_excl)]
        spans.append((lo, hi_excl))
        self.tree.single_spans = spans
        return True

    def idle(self) -> bool:
        """True when every enqueued range is complete (or none exists)."""
        return self._idle

    def run_to_completion(self, max_steps: int = 1_000_000) -> int:
        steps = 0
        while steps < max_steps and self.adapt_step():
            steps += 1
        return steps

    def _front(self) -> Optional[HotspotRange]:
        with self.qlock:
            for hr in self.queue:
                if hr.state != COMPLETE:
                    return hr
        return None

    def _dirty_nodes(self, lo: Key, hi_excl: Optional[Key]) -> List[int]:
        """Node ids still holding buffered in-range data, shallowest first.

        Memtables count as dirt: resident hot data taxes every scan whether
        or not it has been flushed, and drains capture it either way.  A
        write racing a pass just leaves the range dirty for the next probe.
        """
        tree = self.tree
        out: List[int] = []
        for nid in tree._bfs_ids():
            node = tree.nodes.get(nid)
            if node is None or node.handle is None:
                continue
            if hi_excl is not None and node.lo >= hi_excl:
                continue
            if node.hi_excl is not None and node.hi_excl <= lo:
                continue
            p_lo = max(node.lo, lo)
            p_hi = node.hi_excl if hi_excl is None else (
                hi_excl if node.hi_excl is None else min(node.hi_excl, hi_excl))
            if node.handle.has_data_in_span(p_lo, p_hi):
                out.append(nid)
        return out

    def _drain_node(self, nid: int, lo: Key, hi_excl: Optional[Key]) -> None:
        tree = self.tree
        node = tree.nodes[nid]
        if not node.children:
            # bare root: build the first tree level, which flushes everything
            tree.bootstrap()
            return
        d_lo = max(node.lo, lo)
        d_hi = node.hi_excl if hi_excl is None else (
            hi_excl if node.hi_excl is None else min(node.hi_excl, hi_excl))
        with node.handle.drain(d_lo, d_hi, coflush=True) as plan:
            moved = sorted(plan.hot + plan.cold, key=lambda e: e.key)
            for cid, part in zip(list(node.children),
                                 tree._partition_by_routing(node, moved)):
                if part:
                    tree._push_into(cid, part)
            with self.qlock:
                self.entries_flushed += len(plan.hot)
                self.cold_bytes_coflushed += payload_bytes(plan.cold)
        tree.work_seq += 1  # stay-run rewrites may have regrown this node's L0
        for cid in list(node.children):
            tree._settle_overflow(cid)

    # ------------------------------------------------------------ transforms

    def _transform(self, lid: int, lo: Key, hi_excl: Optional[Key]) -> None:
        tree = self.tree
        leaf = tree.nodes[lid]
        # a leaf lo of b"" admits no key below MIN_KEY, so compare at key level
        covered_lo = (leaf.lo or MIN_KEY) >= lo
        covered_hi = hi_excl is None or (leaf.hi_excl is not None and leaf.hi_excl <= hi_excl)
        if covered_lo and covered_hi:
            if self.cfg.leaf_transform == "unbalanced":
                self._transform_unbalanced(leaf)
            else:
                self._transform_balanced(leaf)
        else:
            self._transform_partial(leaf, lo, hi_excl)

    def _make_paged(self, lo: Key, hi_excl: Optional[Key], depth: int,
                    entries: Sequence[Entry]):
        tree = self.tree
        node = tree._new_node(LEAF_PAGED, lo, hi_excl, depth)
        pages = pack_pages(entries, self.cfg.packing, self.cfg.leaf_page_capacity,
                           tree._pages_dir(node.id), tree.file_ids,
                           self.cfg.seek_allowance_per_file)
        node.set_pages(pages)
        with tree.struct_lock:
            tree.pages_created += len(pages)
        return node

    def _transform_balanced(self, leaf) -> None:
        tree = self.tree
        entries = tree._full_snapshot(leaf.handle)
        if leaf.handle.file_count() > 0:
            self.transform_bytes += payload_bytes(entries)
        node = self._make_paged(leaf.lo, leaf.hi_excl, leaf.depth, entries)
        tree.replace_node(leaf.id, [node], [])

    def _transform_unbalanced(self, leaf) -> None:
        """Keep the component's sorted runs: push everything into the deepest
        level, then page each surviving file separately."""
        tree = self.tree
        h = leaf.handle
        h.flush_memtable()
        while True:
            with h.lock:
                shape = [len(lvl) for lvl in h.levels]
            nonempty = [i for i, c in enumerate(shape) if c]
            if not nonempty or (nonempty[0] == nonempty[-1] and nonempty[0] > 0):
                break  # nothing left, or a single sorted level remains
            self.transform_bytes += h.force_compact_level(nonempty[0])
        with h.lock:
            runs = [m.entries for m in h.levels[-1]] if h.levels[-1] else []
        if not runs:
            node = self._make_paged(leaf.lo, leaf.hi_excl, leaf.depth, [])
            tree.replace_node(leaf.id, [node], [])
            return
        seps = [run[0].key for run in runs[1:]]
        bounds: List[Optional[Key]] = [leaf.lo] + seps + [leaf.hi_excl]
        nodes = [self._make_paged(bounds[i], bounds[i + 1], leaf.depth, run)
                 for i, run in enumerate(runs)]
        tree.replace_node(leaf.id, nodes, seps)

    def _transform_partial(self, leaf, lo: Key, hi_excl: Optional[Key]) -> None:
        """A leaf straddling the hotspot edge: page only the overlap, leaving
        the cold sides as fresh buffered leaves."""
        tree = self.tree
        entries = tree._full_snapshot(leaf.handle)
        keys = [e.key for e in entries]
        a = max(leaf.lo, lo)
        b = leaf.hi_excl if hi_excl is None else (
            hi_excl if leaf.hi_excl is None else min(leaf.hi_excl, hi_excl))
        i = bisect_left(keys, a)
        j = bisect_left(keys, b) if b is not None else len(keys)
        self.transform_bytes += payload_bytes(entries) if leaf.handle.file_count() else 0
        nodes = []
        seps: List[Key] = []
        if leaf.lo < a:
            cold = tree._new_node(LEAF_BUFFERED, leaf.lo, a, leaf.depth, buffered=True)
            cold.handle.bulk_install(entries[:i])
            nodes.append(cold)
            seps.append(a)
        nodes.append(self._make_paged(a, b, leaf.depth, entries[i:j]))
        if b is not None and (leaf.hi_excl is None or b < leaf.hi_excl):
            cold = tree._new_node(LEAF_BUFFERED, b, leaf.hi_excl, leaf.depth, buffered=True)
            cold.handle.bulk_install(entries[j:])
            nodes.append(cold)
            seps.append(b)
        tree.replace_node(leaf.id, nodes, seps)

    # -------------------------------------------------------------- progress

    def progress(self) -> Tuple[float, AdaptationStats]:
        """Fraction of enqueued key span currently clean, plus counters.

        Complete ranges are re-probed, so hot data written on top of an
        adapted region pulls the fraction back down even before any scan
        touches it.  Reporting stays side-effect free: turning dirt into
        rework is the job of the scan-driven probes, which keeps pure write
        bursts from being taxed by whoever watches the fraction.
        """
        with self.qlock:
            ranges = [hr.range for hr in self.queue]
        if not ranges:
            return 1.0, self.stats()
        total = 0
        credit = 0
        for r in ranges:
            lo_pt = _key_point(r.lo)
            hi_pt = _key_point(r.hi_excl)
            span = hi_pt - lo_pt
            total += span
            dirty = []
            for nid in self._dirty_nodes(r.lo, r.hi_excl):
                node = self.tree.nodes.get(nid)
                if node is None:
                    continue
                d_lo = max(_key_point(node.lo), lo_pt)
                d_hi = min(_key_point(node.hi_excl), hi_pt)
                if d_lo < d_hi:
                    dirty.append((d_lo, d_hi))
            credit += span - _union_measure(dirty)
        return (credit / total if total else 1.0), self.stats()

    def stats(self) -> AdaptationStats:
        return AdaptationStats(
            ranges_completed=self.ranges_completed,
            entries_flushed=self.entries_flushed,
            pages_created=self.tree.pages_created,
            cold_bytes_coflushed=self.cold_bytes_coflushed,
            transform_bytes=self.transform_bytes,
            page_splits=self.tree.page_splits,
        )

    def queue_view(self) -> List[Tuple[KeyRange, str]]:
        with self.qlock:
            return [(hr.range, hr.state) for hr in self.queue]
