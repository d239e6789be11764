"""Static comparison indexes sharing the adaptive tree's storage substrate.

Two shapes the adaptive tree can morph between, frozen:

* ``BPlusTreeIndex`` - a classic disk-paged B+-tree.  Internal nodes live in
  memory; every leaf is one page file (the same format the adaptive tree's
  paged leaves use), rewritten on each write.  Reads are cheap, writes pay
  full page I/O.
* ``PlainLsmIndex`` - a single leveled LSM component with a byte budget so
  large it never needs a parent to drain into.  Writes are cheap, reads pay
  the multi-run merge.

Both expose put/scan/get/maintenance_step/quiesce/counters so the bench can
drive any index through one code path.
"""

from __future__ import annotations

import itertools
import threading
from bisect import bisect_left, bisect_right
from math import ceil
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .core import Config, Entry, Key, KeyRange, SeqGen, Value, validate_config
from .lsmt import LsmtHandle
from .sstable import sst_delete
from .tree import LeafPage, write_page

BULK_FILL = 0.7


class _BLeaf:
    __slots__ = ("page", "next")

    def __init__(self, page: LeafPage, nxt: Optional["_BLeaf"] = None):
        self.page = page
        self.next = nxt


class _BInternal:
    __slots__ = ("keys", "children")

    def __init__(self, keys: List[Key], children: list):
        self.keys = keys          # len(children) == len(keys) + 1
        self.children = children


class BPlusTreeIndex:
    """Disk-paged B+-tree: in-memory fanout, write-through leaf pages.

    No deletes, so the only structural moves are splits.  All leaves sit at
    the same depth and internal occupancy stays within [ceil(f/2), f] except
    at the root.
    """

    def __init__(self, data_dir, cfg: Config, seq: Optional[SeqGen] = None):
        validate_config(cfg)
        self.dir = Path(data_dir)
        self.pages_dir = self.dir / "pages"
        self.pages_dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.seq = seq if seq is not None else SeqGen()
        self.file_ids = itertools.count(1)
        self.lock = threading.Lock()
        self.root: Optional[object] = None    # _BLeaf or _BInternal; None=empty
        self.leaf_count = 0
        self.page_splits = 0
        self.pages_created = 0

    # ------------------------------------------------------------- plumbing

    def _write_leaf(self, entries: Sequence[Entry], fill: float = 1.0) -> LeafPage:
        return write_page(self.pages_dir, self.file_ids, entries,
                          self.cfg.leaf_page_capacity, fill,
                          self.cfg.seek_allowance_per_file)

    def _drop_page(self, page: LeafPage) -> None:
        sst_delete(page.meta)

    # --------------------------------------------------------------- writes

    def put(self, key: Key, value: Value) -> None:
        entry = Entry(key, value, self.seq.next_seq())
        with self.lock:
            if self.root is None:
                self.root = _BLeaf(self._write_leaf([entry]))
                self.leaf_count = 1
                self.pages_created += 1
                return
            split = self._insert(self.root, entry)
            if split is not None:
                sep, right = split
                self.root = _BInternal([sep], [self.root, right])

    def put_batch(self, pairs: Sequence[Tuple[Key, Value]]) -> None:
        for key, value in pairs:
            self.put(key, value)

    def _insert(self, node, entry: Entry):
        """Returns (separator, new right sibling) when node split, else None."""
        if isinstance(node, _BLeaf):
            return self._leaf_insert(node, entry)
        i = bisect_right(node.keys, entry.key)
        split = self._insert(node.children[i], entry)
        if split is None:
            return None
        sep, right = split
        node.keys.insert(i, sep)
        node.children.insert(i + 1, right)
        if len(node.children) <= self.cfg.fanout_max:
            return None
        mid = len(node.children) // 2
        up = node.keys[mid - 1]
        sibling = _BInternal(node.keys[mid:], node.children[mid:])
        node.keys = node.keys[: mid - 1]
        node.children = node.children[:mid]
        return up, sibling

    def _leaf_insert(self, leaf: _BLeaf, entry: Entry):
        old = leaf.page
        ents = list(old.entries)
        i = bisect_left(old.keys, entry.key)
        if i < len(ents) and ents[i].key == entry.key:
            ents[i] = entry
        else:
            ents.insert(i, entry)
        if len(ents) <= self.cfg.leaf_page_capacity:
            leaf.page = self._write_leaf(ents)
            self._drop_page(old)
            return None
        mid = ceil(len(ents) / 2)
        leaf.page = self._write_leaf(ents[:mid])
        sibling = _BLeaf(self._write_leaf(ents[mid:]), leaf.next)
        leaf.next = sibling
        self._drop_page(old)
        self.leaf_count += 1
        self.page_splits += 1
        self.pages_created += 1
        return ents[mid].key, sibling

    def bulk_load(self, entries: Sequence[Entry]) -> None:
        """Build the whole tree from ascending unique entries at ~70% fill."""
        if not entries:
            return
        per_leaf = max(int(self.cfg.leaf_page_capacity * BULK_FILL), 1)
        with self.lock:
            assert self.root is None, "bulk_load needs an empty index"
            leaves: List[_BLeaf] = []
            for i in range(0, len(entries), per_leaf):
                leaves.append(_BLeaf(self._write_leaf(
                    entries[i:i + per_leaf], BULK_FILL)))
            for a, b in zip(leaves, leaves[1:]):
                a.next = b
            self.leaf_count = len(leaves)
            self.pages_created += len(leaves)

            level: List[object] = list(leaves)
            seps = [lf.page.min_key for lf in leaves[1:]]
            f = self.cfg.fanout_max
            while len(level) > 1:
                groups = self._fanout_groups(len(level), f)
                nxt, nxt_seps, at = [], [], 0
                for g in groups:
                    nxt.append(_BInternal(seps[at:at + g - 1], level[at:at + g]))
                    if at + g - 1 < len(seps):
                        nxt_seps.append(seps[at + g - 1])
                    at += g
                level, seps = nxt, nxt_seps
            self.root = level[0]

    @staticmethod
    def _fanout_groups(n: int, f: int) -> List[int]:
        """Split n children into groups of <=f, all >=ceil(f/2) when n allows."""
        if n <= f:
            return [n]
        groups = [f] * (n // f)
        rest = n % f
        if rest:
            need = ceil(f / 2)
            if rest < need:
                groups[-1] -= need - rest
                rest = need
            groups.append(rest)
        return groups

    # ---------------------------------------------------------------- reads

    def scan(self, r: KeyRange) -> List[Entry]:
        with self.lock:
            node = self.root
            if node is None:
                return []
            while isinstance(node, _BInternal):
                node = node.children[bisect_right(node.keys, r.lo)]
            out: List[Entry] = []
            hi_excl = r.hi_excl
            while node is not None and node.page.min_key < hi_excl:
                out.extend(node.page.slice_span(r.lo, hi_excl))
                node = node.next
            return out

    def get(self, key: Key) -> Optional[Entry]:
        got = self.scan(KeyRange(key, key))
        return got[0] if got else None

    # ------------------------------------------------------------- interface

    def maintenance_step(self) -> bool:
        return False

    def quiesce(self) -> None:
        pass

    def adaptation_fraction(self) -> float:
        return 1.0

    def counters(self) -> Dict[str, int]:
        with self.lock:
            return {
                "size_compactions": 0,
                "seek_compactions": 0,
                "entries_flushed": 0,
                "pages_created": self.pages_created,
                "page_splits": self.page_splits,
            }

    def check_structure(self) -> List[str]:
        """Occupancy and depth violations; empty when the tree is classic."""
        problems: List[str] = []
        if self.root is None:
            return problems
        depths = set()
        floor = ceil(self.cfg.fanout_max / 2)

        def walk(node, depth, is_root):
            if isinstance(node, _BLeaf):
                depths.add(depth)
                if len(node.page.entries) > self.cfg.leaf_page_capacity:
                    problems.append(f"leaf over capacity: {len(node.page.entries)}")
                return
            if len(node.children) != len(node.keys) + 1:
                problems.append("internal arity mismatch")
            if len(node.children) > self.cfg.fanout_max:
                problems.append(f"internal over fanout: {len(node.children)}")
            if not is_root and len(node.children) < floor:
                problems.append(f"internal under min occupancy: {len(node.children)}")
            for c in node.children:
                walk(c, depth + 1, False)

        walk(self.root, 0, True)
        if len(depths) > 1:
            problems.append(f"leaves at unequal depths: {sorted(depths)}")
        return problems


class PlainLsmIndex:
    """One leveled LSM component, never emptied into any tree above it."""

    BYTE_BUDGET = 1 << 40

    def __init__(self, data_dir, cfg: Config, seq: Optional[SeqGen] = None):
        validate_config(cfg)
        self.dir = Path(data_dir)
        self.cfg = cfg
        self.seq = seq if seq is not None else SeqGen()
        self.handle = LsmtHandle(self.dir / "node_0", 0, self.BYTE_BUDGET, cfg,
                                 itertools.count(1))

    def put(self, key: Key, value: Value) -> None:
        self.handle.put(Entry(key, value, self.seq.next_seq()))

    def put_batch(self, pairs: Sequence[Tuple[Key, Value]]) -> None:
        for key, value in pairs:
            self.put(key, value)

    def scan(self, r: KeyRange) -> List[Entry]:
        return self.handle.scan(r)

    def get(self, key: Key) -> Optional[Entry]:
        got = self.handle.scan(KeyRange(key, key))
        return got[0] if got else None

    def maintenance_step(self) -> bool:
        return self.handle.maybe_compact()

    def quiesce(self) -> None:
        while self.maintenance_step():
            pass

    def adaptation_fraction(self) -> float:
        return 1.0

    def counters(self) -> Dict[str, int]:
        s = self.handle.stats
        return {
            "size_compactions": s.size_compactions,
            "seek_compactions": s.seek_compactions,
            "entries_flushed": 0,
            "pages_created": 0,
            "page_splits": 0,
        }
