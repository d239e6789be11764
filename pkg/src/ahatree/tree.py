"""The adaptive index tree.

Structure: a root holding the write-facing LSM component, internal nodes with
routing keys and their own (usually small) components, and leaves that are
either buffered (an LSM component) or paged (a sorted run of disk pages).
Regions of the key space morph between the two leaf shapes at runtime; reads
merge every overlapping source and take the newest version per key.

Thread model: one foreground writer, one background worker doing structural
work (flush-down, splits, compaction, adaptation), any number of readers.
Readers capture a consistent set of slices under struct_lock; structural ops
build replacement nodes off to the side and install them under the same lock,
so no reader ever blocks on bulk I/O.
"""

from __future__ import annotations

import itertools
import os
import shutil
import threading
from bisect import bisect_left, bisect_right
from math import ceil
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

from .core import Config, Entry, Key, KeyRange, SeqGen, Value, validate_config
from .lsmt import CompactionStats, LsmtHandle
from .merge import merge_entries
from .sstable import payload_bytes, sst_delete, sst_write

INTERNAL = "internal"
LEAF_BUFFERED = "leaf_buffered"
LEAF_PAGED = "leaf_paged"


class TouchSet(NamedTuple):
    """What a range scan touched: the range plus every buffered node consulted."""

    range: KeyRange
    node_ids: Tuple[int, ...]


class LeafPage:
    """One disk page of an adapted leaf: ascending unique entries, count-capped."""

    __slots__ = ("entries", "keys", "capacity", "fill_target", "meta")

    def __init__(self, entries: Sequence[Entry], capacity: int, fill_target: float, meta):
        self.entries: Tuple[Entry, ...] = tuple(entries)
        self.keys: Tuple[Key, ...] = tuple(e.key for e in self.entries)
        self.capacity = capacity
        self.fill_target = fill_target
        self.meta = meta

    @property
    def min_key(self) -> Key:
        return self.keys[0]

    @property
    def max_key(self) -> Key:
        return self.keys[-1]

    def slice_span(self, lo: Key, hi_excl: Optional[Key]) -> Tuple[Entry, ...]:
        i = bisect_left(self.keys, lo)
        j = bisect_left(self.keys, hi_excl, i) if hi_excl is not None else len(self.keys)
        return self.entries[i:j]


def write_page(pages_dir: Path, file_ids, entries: Sequence[Entry], capacity: int,
               fill_target: float, seek_floor: int) -> LeafPage:
    fid = next(file_ids)
    meta = sst_write(pages_dir / f"{fid}.sst", fid, entries, seek_floor)
    return LeafPage(entries, capacity, fill_target, meta)


class AhaNode:
    __slots__ = ("id", "kind", "lo", "hi_excl", "routing_keys", "children",
                 "handle", "pages", "page_mins", "pages_ver", "depth")

    def __init__(self, node_id: int, kind: str, lo: Key, hi_excl: Optional[Key], depth: int):
        self.id = node_id
        self.kind = kind
        self.lo = lo                      # half-open interval [lo, hi_excl)
        self.hi_excl = hi_excl            # None means +infinity
        self.routing_keys: List[Key] = []
        self.children: List[int] = []
        self.handle: Optional[LsmtHandle] = None
        self.pages: Tuple[LeafPage, ...] = ()
        self.page_mins: Tuple[Key, ...] = ()
        self.pages_ver = 0
        self.depth = depth

    def set_pages(self, pages: Sequence[LeafPage]) -> None:
        self.pages = tuple(pages)
        self.page_mins = tuple(pg.min_key for pg in self.pages)

    def covers(self, k: Key) -> bool:
        return self.lo <= k and (self.hi_excl is None or k < self.hi_excl)

    def overlaps(self, r: KeyRange) -> bool:
        return self.lo <= r.hi and (self.hi_excl is None or r.lo < self.hi_excl)


class AhaTree:
    def __init__(self, data_dir, cfg: Config, seq: Optional[SeqGen] = None):
        validate_config(cfg)
        self.dir = Path(data_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.seq = seq if seq is not None else SeqGen()
        self.stats = CompactionStats()
        self.node_ids = itertools.count(1)
        self.file_ids = itertools.count(1)
        self.struct_lock = threading.Lock()
        self.nodes: Dict[int, AhaNode] = {}
        self.parents: Dict[int, Optional[int]] = {0: None}
        # Counters for page churn; the adaptation layer folds them into its
        # stats, and the bench reports them per window.
        self.pages_created = 0
        self.page_splits = 0
        self.touch_sink: Optional[Callable[[TouchSet], None]] = None
        # Half-open spans where single-insert mode may write straight into
        # leaf pages; maintained by the adaptation engine on completion.
        self.single_spans: List[Tuple[Key, Key]] = []
        self._struct_ver = 0
        self._order_cache: Tuple[int, List[int]] = (-1, [])
        # Racy work signal: bumped whenever a handle may have gained pending
        # work, so an idle maintenance_step can return without sweeping.
        self.work_seq = 0
        self._quiet = (-1, -1)
        self._sweep_tick = 0

        root = AhaNode(0, INTERNAL, b"", None, 0)
        root.handle = self._new_handle(0, cfg.root_lsmt_limit)
        self.nodes[0] = root
        self.root_handle = root.handle
        self._write_manifest_locked()

    # ------------------------------------------------------------- plumbing

    def _new_handle(self, node_id: int, budget: int) -> LsmtHandle:
        return LsmtHandle(self.dir / f"node_{node_id}", node_id, budget, self.cfg,
                          self.file_ids, self.stats)

    def _new_node(self, kind: str, lo: Key, hi_excl: Optional[Key], depth: int,
                  buffered: bool = False) -> AhaNode:
        node = AhaNode(next(self.node_ids), kind, lo, hi_excl, depth)
        if buffered:
            node.handle = self._new_handle(node.id, self.cfg.node_lsmt_limit)
        return node

    def _write_manifest_locked(self) -> None:
        self._struct_ver += 1
        lines = []
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            lo = n.lo.hex() if n.lo else "-"
            hi = n.hi_excl.hex() if n.hi_excl is not None else "inf"
            routing = ",".join(k.hex() for k in n.routing_keys) or "-"
            children = ",".join(str(c) for c in n.children) or "-"
            lines.append(f"{nid} {n.kind} {lo} {hi} {routing} {children}\n")
        tmp = self.dir / "TREE.tmp"
        tmp.write_text("".join(lines))
        os.replace(tmp, self.dir / "TREE")

    def _drop_node_files(self, node: AhaNode) -> None:
        if node.handle is not None:
            node.handle.destroy_files()
        for pg in node.pages:
            sst_delete(pg.meta)
        shutil.rmtree(self.dir / f"node_{node.id}", ignore_errors=True)

    # --------------------------------------------------------------- writes

    def put(self, key: Key, value: Value) -> None:
        e = Entry(key, value, self.seq.next_seq())
        if self.cfg.insert_mode == "single" and self._single_insert(e):
            return
        self.root_handle.put(e)
        if self.root_handle.work_hint:
            self.work_seq += 1

    def put_batch(self, pairs) -> None:
        entries = [Entry(k, v, self.seq.next_seq()) for k, v in pairs]
        self.root_handle.put_batch(entries)
        if self.root_handle.work_hint:
            self.work_seq += 1

    def _single_insert(self, e: Entry) -> bool:
        spans = self.single_spans
        if not any(lo <= e.key and (hi is None or e.key < hi) for lo, hi in spans):
            return False
        with self.struct_lock:
            node = self.nodes[0]
            while node.kind == INTERNAL and node.children:
                node = self.nodes[node.children[bisect_right(node.routing_keys, e.key)]]
        if node.kind != LEAF_PAGED:
            return False
        self._page_upsert(node, e)
        return True

    # ---------------------------------------------------------------- reads

    def scan(self, r: KeyRange) -> List[Entry]:
        lo, hi, hi_excl = r.lo, r.hi, r.hi_excl
        slices: List[List[Entry]] = []
        touched: List[int] = []
        with self.struct_lock:
            # iterative root-to-leaf descent; recursion only when the range
            # straddles a child boundary
            nodes = self.nodes
            nid = 0
            while True:
                node = nodes[nid]
                if node.kind == LEAF_PAGED:
                    i = max(bisect_right(node.page_mins, lo) - 1, 0)
                    run: List[Entry] = []
                    for pg in node.pages[i:]:
                        if pg.min_key > hi:
                            break
                        s = pg.slice_span(lo, hi_excl)
                        if s:
                            run.extend(s)
                    if run:
                        slices.append(run)
                    break
                h = node.handle
                if h is not None:
                    if h.total_bytes or h.mem.overlaps_span(lo, hi_excl):
                        hs, _ = h.scan_slices_span(lo, hi_excl)
                        contributed = False
                        for s in hs:
                            if s:
                                slices.append(s)
                                contributed = True
                        if contributed:
                            touched.append(nid)
                    if h.work_hint:
                        self.work_seq += 1  # seek charges can arm a compaction
                kids = node.children
                if not kids:
                    break
                start = bisect_right(node.routing_keys, lo)
                end = bisect_right(node.routing_keys, hi)
                if start == end:
                    nid = kids[start]
                    continue
                for i in range(start, end + 1):
                    self._collect(kids[i], r, slices, None, touched)
                break
        if not slices:
            out: List[Entry] = []
        elif len(slices) == 1:
            s0 = slices[0]
            # mem and page slices are fresh lists, safe to hand out as-is;
            # file slices are cached tuples and need the copy
            out = s0 if type(s0) is list else list(s0)
        elif not touched:
            # page runs of distinct nodes partition the keyspace and were
            # collected in key order, so concatenation is already the merge
            out = []
            for s in slices:
                out.extend(s)
        else:
            out = merge_entries(slices)
        if touched and self.touch_sink is not None and self.cfg.adaptation_enabled:
            self.touch_sink(TouchSet(r, tuple(touched)))
        return out

    def scan_attributed(self, r: KeyRange):
        """Merged newest-per-key scan plus (node_id, source, count) attribution.

        source is "mem", "file" or "page"; only sources that contributed at
        least one pre-merge entry are listed.
        """
        slices: List[List[Entry]] = []
        sources: List[Tuple[int, str, int]] = []
        touched: List[int] = []
        with self.struct_lock:
            self._collect(0, r, slices, sources, touched)
        if len(slices) > 1 and not touched:
            out: List[Entry] = []
            for s in slices:
                out.extend(s)
        else:
            out = merge_entries(slices)
        if touched and self.touch_sink is not None and self.cfg.adaptation_enabled:
            self.touch_sink(TouchSet(r, tuple(touched)))
        return out, sources

    def _collect(self, nid: int, r: KeyRange, slices, sources, touched) -> None:
        node = self.nodes[nid]
        if node.kind == LEAF_PAGED:
            i = max(bisect_right(node.page_mins, r.lo) - 1, 0)
            run: List[Entry] = []
            for pg in node.pages[i:]:
                if pg.min_key > r.hi:
                    break
                s = pg.slice_span(r.lo, r.hi_excl)
                if s:
                    run.extend(s)
            if run:
                slices.append(run)
                if sources is not None:
                    sources.append((nid, "page", len(run)))
            return
        h = node.handle
        if h is not None:
            hs, _ = h.scan_slices_span(r.lo, r.hi_excl)
            if hs:
                contributed = False
                if hs[0]:
                    slices.append(hs[0])
                    contributed = True
                    if sources is not None:
                        sources.append((nid, "mem", len(hs[0])))
                for fs in hs[1:]:
                    if fs:
                        slices.append(fs)
                        contributed = True
                        if sources is not None:
                            sources.append((nid, "file", len(fs)))
                if contributed:
                    touched.append(nid)
            if h.work_hint:
                self.work_seq += 1  # seek charges can arm a compaction
        if node.children:
            start = bisect_right(node.routing_keys, r.lo)
            end = bisect_right(node.routing_keys, r.hi)
            for i in range(start, end + 1):
                self._collect(node.children[i], r, slices, sources, touched)

    def get(self, key: Key) -> Optional[Entry]:
        got = self.scan(KeyRange(key, key))
        return got[0] if got else None

    # -------------------------------------------------------- background work

    def maintenance_step(self) -> bool:
        """One bounded unit of structural work; True if anything happened.

        The per-node checks here are racy fast paths; every action re-checks
        its trigger under the proper locks before doing anything.  An idle
        tree is recognized in O(1): after a sweep that found nothing, the
        (work_seq, struct_ver) pair seen before the sweep is memoized, and
        later calls return early while it still matches.  Arming sites set
        their handle's work_hint before bumping work_seq, so a sweep that
        misses a concurrent arm always leaves a stale memo behind.  A full
        sweep every 64th call backstops any unbumped path.
        """
        self._sweep_tick = (self._sweep_tick + 1) & 63
        snap = (self.work_seq, self._struct_ver)
        if snap == self._quiet and self._sweep_tick:
            return False
        root = self.nodes[0]
        if root.handle.over_budget_fast() and root.handle.overflowing():
            if root.children:
                self.level_empty(0)
                return True
            if self.bootstrap():
                return True
            # a bare root with one distinct key cannot be partitioned;
            # fall through and let compaction shrink it instead
        order = self._bfs_ids()
        for nid in order:
            if nid == 0:
                continue  # handled above
            node = self.nodes.get(nid)
            if (node is not None and node.handle is not None
                    and node.handle.over_budget_fast()
                    and self._settle_overflow(nid)):
                return True
        for nid in order:
            node = self.nodes.get(nid)
            if (node is not None and node.handle is not None
                    and node.handle.work_hint and node.handle.maybe_compact()):
                return True
        self._quiet = snap
        return False

    def quiesce(self) -> None:
        while self.maintenance_step():
            pass

    def _bfs_ids(self) -> List[int]:
        """Shallow-to-deep node order; cached until the shape changes."""
        with self.struct_lock:
            ver, order = self._order_cache
            if ver == self._struct_ver:
                return order
            order = [0]
            i = 0
            while i < len(order):
                order.extend(self.nodes[order[i]].children)
                i += 1
            self._order_cache = (self._struct_ver, order)
        return order

    def _settle_overflow(self, nid: int) -> bool:
        node = self.nodes.get(nid)
        if node is None or node.handle is None or not node.handle.overflowing():
            return False
        if node.kind == INTERNAL and node.children:
            self.level_empty(nid)
            return True
        if node.kind == LEAF_BUFFERED:
            self.leaf_split(nid)
            return True
        return False

    # ------------------------------------------------------------ bootstrap

    def bootstrap(self) -> bool:
        """First overflow of the bare root: pick quantile routing keys, hang
        leaf children under the root, then flush everything down."""
        root = self.nodes[0]
        entries = self._full_snapshot(self.root_handle)
        keys = [e.key for e in entries]
        n = len(keys)
        f = self.cfg.fanout_max
        picks: List[Key] = []
        for j in range(1, f):
            k = keys[(j * n) // f]
            if not picks or k > picks[-1]:
                picks.append(k)
        if not picks:
            return False  # a single distinct key cannot be partitioned yet
        bounds: List[Optional[Key]] = [root.lo] + list(picks) + [root.hi_excl]
        kids: List[AhaNode] = []
        for i in range(len(bounds) - 1):
            kids.append(self._new_node(LEAF_BUFFERED, bounds[i], bounds[i + 1], 1, buffered=True))
        with self.struct_lock:
            for kid in kids:
                self.nodes[kid.id] = kid
                self.parents[kid.id] = 0
            root.routing_keys = list(picks)
            root.children = [kid.id for kid in kids]
            self._write_manifest_locked()
        self.level_empty(0)
        return True

    def _full_snapshot(self, handle: LsmtHandle) -> List[Entry]:
        slices, _ = handle.scan_slices_span(b"", None)
        return merge_entries(slices)

    # ----------------------------------------------------------- level empty

    def level_empty(self, nid: int) -> None:
        """Fully drain a node's buffer into its children, then settle any
        child that the push tipped over budget."""
        node = self.nodes[nid]
        with node.handle.drain(node.lo, node.hi_excl) as plan:
            parts = self._partition_by_routing(node, plan.hot)
            for cid, part in zip(list(node.children), parts):
                if part:
                    self._push_into(cid, part)
        for cid in list(node.children):
            self._settle_overflow(cid)

    def _partition_by_routing(self, node: AhaNode, entries: Sequence[Entry]):
        keys = [e.key for e in entries]
        parts = []
        prev = 0
        for rk in node.routing_keys:
            cut = bisect_left(keys, rk, prev)
            parts.append(entries[prev:cut])
            prev = cut
        parts.append(entries[prev:])
        return parts

    def _push_into(self, cid: int, entries: Sequence[Entry]) -> None:
        child = self.nodes[cid]
        if child.kind == LEAF_PAGED:
            self._merge_into_pages(child, entries)
        else:
            child.handle.put_batch(entries)
            self.work_seq += 1  # the push may leave the child over budget

    # ------------------------------------------------------------ leaf split

    def leaf_split(self, lid: int) -> None:
        """Split an over-budget buffered leaf into contiguous key runs sized
        to half the leaf budget, splicing new routing keys into the parent."""
        leaf = self.nodes[lid]
        entries = self._full_snapshot(leaf.handle)
        total = payload_bytes(entries)
        groups = ceil(total / (self.cfg.node_lsmt_limit / 2)) if total else 0
        groups = min(groups, len(entries))
        if groups < 2:
            # Over budget only through dead versions: rewriting the newest
            # set back is enough.
            self._rebuild_leaf(leaf, entries)
            return
        runs = _even_runs(entries, groups)
        new_nodes: List[AhaNode] = []
        seps: List[Key] = [run[0].key for run in runs[1:]]
        bounds: List[Optional[Key]] = [leaf.lo] + seps + [leaf.hi_excl]
        for i, run in enumerate(runs):
            kid = self._new_node(LEAF_BUFFERED, bounds[i], bounds[i + 1], leaf.depth, buffered=True)
            kid.handle.bulk_install(run)
            new_nodes.append(kid)
        self.replace_node(lid, new_nodes, seps)

    def _rebuild_leaf(self, leaf: AhaNode, entries: List[Entry]) -> None:
        kid = self._new_node(LEAF_BUFFERED, leaf.lo, leaf.hi_excl, leaf.depth, buffered=True)
        kid.handle.bulk_install(entries)
        self.replace_node(leaf.id, [kid], [])

    # ------------------------------------------------- structural install

    def replace_node(self, old_id: int, new_nodes: List[AhaNode], seps: List[Key]) -> None:
        """Swap one node for an ascending run of replacements (install point
        of splits and leaf transforms).  Propagates fanout splits upward."""
        assert len(seps) == len(new_nodes) - 1
        old = self.nodes[old_id]
        pid = self.parents[old_id]
        with self.struct_lock:
            parent = self.nodes[pid]
            pos = parent.children.index(old_id)
            parent.children[pos:pos + 1] = [n.id for n in new_nodes]
            parent.routing_keys[pos:pos] = seps
            for n in new_nodes:
                self.nodes[n.id] = n
                self.parents[n.id] = pid
            del self.nodes[old_id]
            del self.parents[old_id]
            self._write_manifest_locked()
        self._drop_node_files(old)
        self._fix_fanout_chain(pid)

    def _fix_fanout_chain(self, nid: Optional[int]) -> None:
        settle: List[int] = []
        while nid is not None:
            node = self.nodes.get(nid)
            if node is None or len(node.children) <= self.cfg.fanout_max:
                break
            if nid == 0:
                self._split_root()
                break
            parent = self.parents[nid]
            settle.extend(self._split_internal(nid))
            nid = parent
        for sid in settle:
            self._settle_overflow(sid)

    def _split_internal(self, nid: int) -> List[int]:
        node = self.nodes[nid]
        half = len(node.children) // 2
        sep = node.routing_keys[half - 1]
        entries = self._full_snapshot(node.handle)
        cut = bisect_left([e.key for e in entries], sep)
        left = self._new_node(INTERNAL, node.lo, sep, node.depth, buffered=True)
        right = self._new_node(INTERNAL, sep, node.hi_excl, node.depth, buffered=True)
        left.children = node.children[:half]
        left.routing_keys = node.routing_keys[:half - 1]
        right.children = node.children[half:]
        right.routing_keys = node.routing_keys[half:]
        left.handle.bulk_install(entries[:cut])
        right.handle.bulk_install(entries[cut:])
        pid = self.parents[nid]
        with self.struct_lock:
            parent = self.nodes[pid]
            pos = parent.children.index(nid)
            parent.children[pos:pos + 1] = [left.id, right.id]
            parent.routing_keys[pos:pos] = [sep]
            self.nodes[left.id] = left
            self.nodes[right.id] = right
            self.parents[left.id] = pid
            self.parents[right.id] = pid
            for half_node in (left, right):
                for cid in half_node.children:
                    self.parents[cid] = half_node.id
            del self.nodes[nid]
            del self.parents[nid]
            self._write_manifest_locked()
        self._drop_node_files(node)
        return [left.id, right.id]

    def _split_root(self) -> None:
        # The root keeps its identity and its write-facing component; its
        # children are rehung under two fresh internal nodes.
        root = self.nodes[0]
        half = len(root.children) // 2
        sep = root.routing_keys[half - 1]
        left = self._new_node(INTERNAL, root.lo, sep, 1, buffered=True)
        right = self._new_node(INTERNAL, sep, root.hi_excl, 1, buffered=True)
        left.children = root.children[:half]
        left.routing_keys = root.routing_keys[:half - 1]
        right.children = root.children[half:]
        right.routing_keys = root.routing_keys[half:]
        with self.struct_lock:
            self.nodes[left.id] = left
            self.nodes[right.id] = right
            self.parents[left.id] = 0
            self.parents[right.id] = 0
            for half_node in (left, right):
                for cid in half_node.children:
                    self.parents[cid] = half_node.id
            root.children = [left.id, right.id]
            root.routing_keys = [sep]
            self._refresh_depths_locked()
            self._write_manifest_locked()

    def _refresh_depths_locked(self) -> None:
        stack = [(0, 0)]
        while stack:
            nid, d = stack.pop()
            node = self.nodes[nid]
            node.depth = d
            for cid in node.children:
                stack.append((cid, d + 1))

    # ----------------------------------------------------------- leaf pages

    def _page_run_index(self, pages: Sequence[LeafPage], k: Key) -> int:
        mins = [pg.min_key for pg in pages]
        return max(bisect_right(mins, k) - 1, 0)

    def _pages_dir(self, nid: int) -> Path:
        return self.dir / f"node_{nid}" / "pages"

    def _merge_into_pages(self, node: AhaNode, entries: Sequence[Entry]) -> None:
        """Merge a batch of fresher entries into a paged leaf, rewriting the
        touched pages and splitting any that overflow.

        Built off to the side against a snapshot, installed only if the page
        set did not change underneath (it can, when a single-mode writer
        races a background push); on conflict the build is retried.
        """
        if not entries:
            return
        cap = self.cfg.leaf_page_capacity
        while True:
            with self.struct_lock:
                snapshot, ver = node.pages, node.pages_ver
            if not snapshot:
                new_pages, splits = self._pack_even_pages(node.id, entries), 0
            else:
                new_pages, splits = self._merged_pages(node.id, snapshot, entries, cap)
            with self.struct_lock:
                if node.pages_ver != ver:
                    stale = [pg for pg in new_pages if pg not in snapshot]
                    conflict = True
                else:
                    replaced = [pg for pg in snapshot if pg not in new_pages]
                    written = sum(1 for pg in new_pages if pg not in snapshot)
                    node.set_pages(new_pages)
                    node.pages_ver = ver + 1
                    # rewrites replace one page with one page; only growth of
                    # the page population counts as creation
                    self.pages_created += max(written - len(replaced), 0)
                    self.page_splits += splits
                    conflict = False
            if not conflict:
                for pg in replaced:
                    sst_delete(pg.meta)
                return
            for pg in stale:
                sst_delete(pg.meta)

    def _merged_pages(self, nid: int, pages: Tuple[LeafPage, ...], entries, cap: int):
        per_page: List[List[Entry]] = [[] for _ in pages]
        mins = [pg.min_key for pg in pages]
        for e in entries:
            per_page[max(bisect_right(mins, e.key) - 1, 0)].append(e)
        out: List[LeafPage] = []
        splits = 0
        pdir = self._pages_dir(nid)
        floor = self.cfg.seek_allowance_per_file
        for pg, adds in zip(pages, per_page):
            if not adds:
                out.append(pg)
                continue
            merged = merge_entries([pg.entries, adds])
            if len(merged) <= cap:
                out.append(write_page(pdir, self.file_ids, merged, cap, len(merged) / cap, floor))
            else:
                splits += 1
                for run in _even_runs(merged, ceil(len(merged) / cap)):
                    out.append(write_page(pdir, self.file_ids, run, cap, len(run) / cap, floor))
        return out, splits

    def _pack_even_pages(self, nid: int, entries: Sequence[Entry]) -> List[LeafPage]:
        cap = self.cfg.leaf_page_capacity
        pdir = self._pages_dir(nid)
        floor = self.cfg.seek_allowance_per_file
        return [write_page(pdir, self.file_ids, run, cap, len(run) / cap, floor)
                for run in _even_runs(list(entries), ceil(len(entries) / cap))]

    def _page_upsert(self, node: AhaNode, e: Entry) -> None:
        cap = self.cfg.leaf_page_capacity
        pdir = self._pages_dir(node.id)
        floor = self.cfg.seek_allowance_per_file
        while True:
            with self.struct_lock:
                snapshot, ver = node.pages, node.pages_ver
            if not snapshot:
                built = [write_page(pdir, self.file_ids, [e], cap, 1 / cap, floor)]
                idx, split = 0, False
            else:
                idx = self._page_run_index(snapshot, e.key)
                merged = merge_entries([snapshot[idx].entries, [e]])
                if len(merged) <= cap:
                    built = [write_page(pdir, self.file_ids, merged, cap, len(merged) / cap, floor)]
                    split = False
                else:
                    # classic half split keeps single-insert cost O(1 page)
                    mid = ceil(len(merged) / 2)
                    built = [
                        write_page(pdir, self.file_ids, merged[:mid], cap, mid / cap, floor),
                        write_page(pdir, self.file_ids, merged[mid:], cap, (len(merged) - mid) / cap, floor),
                    ]
                    split = True
            with self.struct_lock:
                if node.pages_ver != ver:
                    conflict = True
                else:
                    if snapshot:
                        node.set_pages(snapshot[:idx] + tuple(built) + snapshot[idx + 1:])
                        replaced = [snapshot[idx]]
                    else:
                        node.set_pages(built)
                        replaced = []
                    node.pages_ver = ver + 1
                    self.pages_created += len(built) - len(replaced)
                    self.page_splits += 1 if split else 0
                    conflict = False
            if not conflict:
                for pg in replaced:
                    sst_delete(pg.meta)
                return
            for pg in built:
                sst_delete(pg.meta)

    # ------------------------------------------------------------ invariants

    def check_freshness_invariant(self) -> List[Tuple[Key, int, int, int, int]]:
        """Walk every root-to-leaf path; for a key present at several depths
        the per-component max seq must strictly decrease going down.

        Returns violation tuples (key, shallow_node, shallow_seq, deep_node,
        deep_seq); empty means the invariant holds.
        """
        violations: List[Tuple[Key, int, int, int, int]] = []

        def node_versions(node: AhaNode) -> Dict[Key, int]:
            m: Dict[Key, int] = {}
            if node.handle is not None:
                for k, s in node.handle.all_versions():
                    if s > m.get(k, -1):
                        m[k] = s
            for pg in node.pages:
                for e in pg.entries:
                    m[e.key] = e.seq
            return m

        def walk(nid: int, ancestors) -> None:
            node = self.nodes[nid]
            m = node_versions(node)
            for k, s in m.items():
                for anc_id, anc_map in ancestors:
                    a = anc_map.get(k)
                    if a is not None and a <= s:
                        violations.append((k, anc_id, a, nid, s))
            for cid in node.children:
                walk(cid, ancestors + [(nid, m)])

        walk(0, [])
        return violations

    def check_intervals(self) -> List[str]:
        """Structural audit: entry containment, child partitions, page order."""
        problems: List[str] = []

        def walk(nid: int) -> None:
            node = self.nodes[nid]
            if node.handle is not None:
                for k, _ in node.handle.all_versions():
                    if not node.covers(k):
                        problems.append(f"node {nid}: key {k.hex()} outside interval")
                        break
            prev_max: Optional[Key] = None
            for pg in node.pages:
                if len(pg.entries) > pg.capacity:
                    problems.append(f"node {nid}: page over capacity")
                if not (node.covers(pg.min_key) and node.covers(pg.max_key)):
                    problems.append(f"node {nid}: page outside interval")
                if prev_max is not None and pg.min_key <= prev_max:
                    problems.append(f"node {nid}: pages out of order")
                prev_max = pg.max_key
            if node.children:
                if len(node.routing_keys) != len(node.children) - 1:
                    problems.append(f"node {nid}: routing/children arity mismatch")
                bounds = [node.lo] + node.routing_keys + [node.hi_excl]
                for i, cid in enumerate(node.children):
                    child = self.nodes[cid]
                    if child.lo != bounds[i] or child.hi_excl != bounds[i + 1]:
                        problems.append(f"node {nid}: child {cid} interval mismatch")
                    if self.parents.get(cid) != nid:
                        problems.append(f"node {nid}: child {cid} parent pointer wrong")
                    walk(cid)

        walk(0)
        return problems

    # ----------------------------------------------------------------- misc

    def node_count(self) -> int:
        with self.struct_lock:
            return len(self.nodes)

    def leaf_kinds(self) -> Dict[str, int]:
        with self.struct_lock:
            out: Dict[str, int] = {}
            for n in self.nodes.values():
                if n.kind != INTERNAL:
                    out[n.kind] = out.get(n.kind, 0) + 1
            return out


def _even_runs(entries: Sequence[Entry], groups: int) -> List[Sequence[Entry]]:
    """Contiguous runs with entry counts differing by at most one."""
    n = len(entries)
    groups = max(1, min(groups, n))
    base, rem = divmod(n, groups)
    runs = []
    at = 0
    for i in range(groups):
        size = base + (1 if i < rem else 0)
        runs.append(entries[at:at + size])
        at += size
    return runs
