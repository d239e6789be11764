"""In-memory write buffer: one resident version per key, ordered iteration."""

from __future__ import annotations

from bisect import bisect_left, insort
from typing import Iterable, Iterator, List, Optional

from .core import Entry, Key, KeyRange


class MemTable:
    """Sorted insert buffer sized by raw key+value bytes.

    A plain dict gives O(1) updates and a parallel sorted key list gives
    ordered scans; insort's memmove is C-speed and buffers stay small
    (thousands of entries), so this beats a tree for this workload.
    """

    __slots__ = ("capacity", "_map", "_keys", "approx_bytes")

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._map: dict = {}
        self._keys: List[Key] = []
        self.approx_bytes = 0

    def __len__(self) -> int:
        return len(self._map)

    def put(self, e: Entry) -> bool:
        """Insert or replace; returns True when the buffer is at capacity.

        A newer version of a resident key replaces it in place and the old
        version's bytes are released.
        """
        old = self._map.get(e.key)
        if old is None:
            insort(self._keys, e.key)
            self.approx_bytes += len(e.key) + len(e.value)
        else:
            self.approx_bytes += len(e.value) - len(old[0])
        self._map[e.key] = (e.value, e.seq)
        return self.approx_bytes >= self.capacity

    def merge_put(self, e: Entry) -> None:
        """Like put but keeps whichever version has the larger seq.

        Used when drained remainders fold back into a live buffer that may
        have accepted fresher writes in the meantime.
        """
        old = self._map.get(e.key)
        if old is not None and old[1] >= e.seq:
            return
        self.put(e)

    def get(self, k: Key) -> Optional[Entry]:
        v = self._map.get(k)
        if v is None:
            return None
        return Entry(k, v[0], v[1])

    def scan(self, r: KeyRange) -> List[Entry]:
        """Entries with key in [r.lo, r.hi], ascending."""
        return self.scan_span(r.lo, r.hi_excl)

    def scan_span(self, lo: Key, hi_excl: Optional[Key]) -> List[Entry]:
        i = bisect_left(self._keys, lo)
        j = bisect_left(self._keys, hi_excl, i) if hi_excl is not None else len(self._keys)
        m = self._map
        out = []
        for k in self._keys[i:j]:
            v = m[k]
            out.append(Entry(k, v[0], v[1]))
        return out

    def has_key_in_span(self, lo: Key, hi_excl: Optional[Key]) -> bool:
        i = bisect_left(self._keys, lo)
        if i >= len(self._keys):
            return False
        return hi_excl is None or self._keys[i] < hi_excl

    def overlaps_span(self, lo: Key, hi_excl: Optional[Key]) -> bool:
        """Cheap bounds test; unlike has_key_in_span it may say yes to a
        span that only straddles a gap between resident keys."""
        keys = self._keys
        if not keys:
            return False
        return keys[-1] >= lo and (hi_excl is None or keys[0] < hi_excl)

    def bounds(self):
        if not self._keys:
            return None
        return self._keys[0], self._keys[-1]

    def freeze_drain(self) -> List[Entry]:
        """Empty the buffer and return everything in ascending key order."""
        m = self._map
        out = [Entry(k, m[k][0], m[k][1]) for k in self._keys]
        self._map = {}
        self._keys = []
        self.approx_bytes = 0
        return out

    def remove_span(self, lo: Key, hi_excl: Optional[Key]) -> List[Entry]:
        """Remove and return entries with key in [lo, hi_excl), ascending."""
        i = bisect_left(self._keys, lo)
        j = bisect_left(self._keys, hi_excl, i) if hi_excl is not None else len(self._keys)
        if i == j:
            return []
        victims = self._keys[i:j]
        del self._keys[i:j]
        m = self._map
        out = []
        freed = 0
        for k in victims:
            v = m.pop(k)
            freed += len(k) + len(v[0])
            out.append(Entry(k, v[0], v[1]))
        self.approx_bytes -= freed
        return out

    def remove_exact(self, entries: Iterable[Entry]) -> None:
        """Remove keys only if the resident seq still matches the snapshot.

        A fresher concurrent write to the same key survives the removal.
        """
        m = self._map
        dead = []
        freed = 0
        for e in entries:
            v = m.get(e.key)
            if v is not None and v[1] == e.seq:
                del m[e.key]
                dead.append(e.key)
                freed += len(e.key) + len(v[0])
        if not dead:
            return
        self.approx_bytes -= freed
        if len(dead) > len(self._keys) // 4:
            self._keys = sorted(m.keys())
        else:
            for k in dead:
                i = bisect_left(self._keys, k)
                del self._keys[i]
