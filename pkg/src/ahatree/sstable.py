"""Immutable sorted files.

On-disk layout, all integers little-endian:

    header   magic "AHAT" | format_version u32 | entry_count u32
    records  entry_count * [key_len u32 | key | seq u64 | val_len u32 | value]
             sorted strictly ascending by key
    footer   min_key_len u32 | min_key | max_key_len u32 | max_key
             | crc32 (IEEE, over all preceding bytes)

The format is a single flat block: no block index, no filters.  Files are
written once and never modified; rewrites produce new files.
"""

from __future__ import annotations

import os
import struct
import zlib
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .core import Entry, Key, KeyRange

MAGIC = b"AHAT"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_HDR = struct.Struct("<4sII")

# A file's seek allowance scales with its size; small files still get the
# configured floor so a handful of scans cannot evict them immediately.
SEEK_BYTES_PER_UNIT = 16384


def seek_allowance(byte_size: int, floor: int) -> int:
    return max(byte_size // SEEK_BYTES_PER_UNIT, floor)


class SstError(Exception):
    """Base class for table file problems."""


class SstMissingError(SstError):
    pass


class SstFormatError(SstError):
    """Bad magic or unsupported version."""


class SstCorruptionError(SstError):
    """Checksum mismatch or truncated payload."""


@dataclass
class SstMeta:
    file_id: int
    path: Path
    min_key: Key
    max_key: Key
    entry_count: int
    byte_size: int              # sum of key+value lengths, the budget currency
    seeks_remaining: int
    # Entries are cached eagerly: the writer already has them and files are
    # immutable, so readers never revisit the disk after open.
    entries: Tuple[Entry, ...] = field(default=(), repr=False)
    keys: Tuple[Key, ...] = field(default=(), repr=False)

    def overlaps(self, r: KeyRange) -> bool:
        return self.min_key <= r.hi and r.lo <= self.max_key

    def overlaps_span(self, lo: Key, hi_excl: Optional[Key]) -> bool:
        if hi_excl is not None and self.min_key >= hi_excl:
            return False
        return lo <= self.max_key

    def slice_span(self, lo: Key, hi_excl: Optional[Key]) -> Sequence[Entry]:
        i = bisect_left(self.keys, lo)
        j = bisect_left(self.keys, hi_excl, i) if hi_excl is not None else len(self.keys)
        return self.entries[i:j]


def payload_bytes(entries: Sequence[Entry]) -> int:
    return sum(len(e.key) + len(e.value) for e in entries)


def sst_write(path: Path, file_id: int, entries: Sequence[Entry], seek_floor: int) -> SstMeta:
    """Write ascending entries to a new table file and return its metadata.

    Entries must be non-empty, strictly ascending and deduplicated by key;
    level invariants upstream guarantee this.
    """
    if not entries:
        raise ValueError("refusing to write an empty table file")
    parts: List[bytes] = [_HDR.pack(MAGIC, FORMAT_VERSION, len(entries))]
    prev = None
    for e in entries:
        if prev is not None and e.key <= prev:
            raise ValueError("entries must be strictly ascending by key")
        prev = e.key
        parts.append(_U32.pack(len(e.key)))
        parts.append(e.key)
        parts.append(_U64.pack(e.seq))
        parts.append(_U32.pack(len(e.value)))
        parts.append(e.value)
    min_key, max_key = entries[0].key, entries[-1].key
    parts.append(_U32.pack(len(min_key)))
    parts.append(min_key)
    parts.append(_U32.pack(len(max_key)))
    parts.append(max_key)
    body = b"".join(parts)
    blob = body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)

    size = payload_bytes(entries)
    ent = tuple(entries)
    return SstMeta(
        file_id=file_id,
        path=path,
        min_key=min_key,
        max_key=max_key,
        entry_count=len(entries),
        byte_size=size,
        seeks_remaining=seek_allowance(size, seek_floor),
        entries=ent,
        keys=tuple(e.key for e in ent),
    )


def sst_open(path: Path, file_id: int, seek_floor: int) -> SstMeta:
    """Parse and validate a table file, caching its entries.

    Distinguishes a missing file, a foreign or future format, and a
    corrupted payload.
    """
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise SstMissingError(f"table file missing: {path}") from None
    if len(blob) < _HDR.size + _U32.size:
        raise SstCorruptionError(f"table file truncated: {path}")
    magic, version, count = _HDR.unpack_from(blob, 0)
    if magic != MAGIC:
        raise SstFormatError(f"bad magic in {path}")
    if version != FORMAT_VERSION:
        raise SstFormatError(f"unsupported format version {version} in {path}")

    body, crc_raw = blob[:-4], blob[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != _U32.unpack(crc_raw)[0]:
        raise SstCorruptionError(f"checksum mismatch in {path}")

    off = _HDR.size
    entries: List[Entry] = []
    try:
        for _ in range(count):
            (klen,) = _U32.unpack_from(body, off)
            off += 4
            key = body[off : off + klen]
            off += klen
            (seq,) = _U64.unpack_from(body, off)
            off += 8
            (vlen,) = _U32.unpack_from(body, off)
            off += 4
            val = body[off : off + vlen]
            off += vlen
            if len(key) != klen or len(val) != vlen:
                raise SstCorruptionError(f"record overruns file body: {path}")
            entries.append(Entry(key, val, seq))
        (mlen,) = _U32.unpack_from(body, off)
        off += 4
        min_key = body[off : off + mlen]
        off += mlen
        (xlen,) = _U32.unpack_from(body, off)
        off += 4
        max_key = body[off : off + xlen]
        off += xlen
    except struct.error:
        raise SstCorruptionError(f"table file truncated: {path}") from None
    if off != len(body):
        raise SstCorruptionError(f"trailing bytes in {path}")
    if not entries:
        raise SstCorruptionError(f"empty table file: {path}")
    if min_key != entries[0].key or max_key != entries[-1].key:
        raise SstCorruptionError(f"footer bounds disagree with records: {path}")
    for a, b in zip(entries, entries[1:]):
        if b.key <= a.key:
            raise SstCorruptionError(f"records out of order in {path}")

    size = payload_bytes(entries)
    ent = tuple(entries)
    return SstMeta(
        file_id=file_id,
        path=Path(path),
        min_key=min_key,
        max_key=max_key,
        entry_count=count,
        byte_size=size,
        seeks_remaining=seek_allowance(size, seek_floor),
        entries=ent,
        keys=tuple(e.key for e in ent),
    )


def sst_scan(meta: SstMeta, r: KeyRange) -> List[Entry]:
    """Ascending entries within r.  Charges one seek if the file overlaps r."""
    if not meta.overlaps(r):
        return []
    meta.seeks_remaining -= 1
    return list(meta.slice_span(r.lo, r.hi_excl))


def sst_delete(meta: SstMeta) -> None:
    # Cached entries keep any in-flight reader safe; the path can go now.
    try:
        os.unlink(meta.path)
    except FileNotFoundError:
        pass
