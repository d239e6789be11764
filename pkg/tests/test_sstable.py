import random

import pytest

from ahatree.core import Entry, KeyRange, encode_key
from ahatree.sstable import (
    SstCorruptionError,
    SstFormatError,
    SstMissingError,
    seek_allowance,
    sst_open,
    sst_scan,
    sst_write,
)


def _entries(ks, seq0=1):
    return [Entry(encode_key(k), b"v%d" % k, seq0 + i) for i, k in enumerate(ks)]


def test_write_then_open_round_trip_fixture(tmp_path):
    ents = _entries([45, 47, 49])
    meta = sst_write(tmp_path / "1.sst", 1, ents, seek_floor=100)
    assert meta.min_key == encode_key(45) and meta.max_key == encode_key(49)
    assert meta.entry_count == 3
    reopened = sst_open(tmp_path / "1.sst", 1, seek_floor=100)
    assert list(reopened.entries) == ents
    assert reopened.min_key == meta.min_key and reopened.max_key == meta.max_key
    assert reopened.byte_size == meta.byte_size


def test_round_trip_random_entries(tmp_path):
    rng = random.Random(3)
    ks = sorted(rng.sample(range(100_000), 10_000))
    ents = [Entry(encode_key(k), rng.randbytes(rng.randrange(0, 20)), i + 1) for i, k in enumerate(ks)]
    meta = sst_write(tmp_path / "big.sst", 7, ents, seek_floor=100)
    back = sst_open(tmp_path / "big.sst", 7, seek_floor=100)
    assert list(back.entries) == ents
    assert back.entry_count == 10_000
    assert meta.byte_size == sum(len(e.key) + len(e.value) for e in ents)


def test_missing_file_distinguished(tmp_path):
    with pytest.raises(SstMissingError):
        sst_open(tmp_path / "nope.sst", 1, seek_floor=100)


def test_bad_magic_distinguished(tmp_path):
    p = tmp_path / "x.sst"
    sst_write(p, 1, _entries([1, 2]), seek_floor=100)
    raw = bytearray(p.read_bytes())
    raw[0:4] = b"NOPE"
    p.write_bytes(bytes(raw))
    with pytest.raises(SstFormatError):
        sst_open(p, 1, seek_floor=100)


def test_flipped_byte_fails_checksum(tmp_path):
    p = tmp_path / "x.sst"
    sst_write(p, 1, _entries([1, 2, 3]), seek_floor=100)
    raw = bytearray(p.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises((SstCorruptionError, SstFormatError)):
        sst_open(p, 1, seek_floor=100)


def test_truncation_detected(tmp_path):
    p = tmp_path / "x.sst"
    sst_write(p, 1, _entries([1, 2, 3]), seek_floor=100)
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) - 6])
    with pytest.raises(SstCorruptionError):
        sst_open(p, 1, seek_floor=100)


def test_empty_write_rejected(tmp_path):
    with pytest.raises(ValueError):
        sst_write(tmp_path / "e.sst", 1, [], seek_floor=100)


def test_unsorted_write_rejected(tmp_path):
    bad = [Entry(encode_key(2), b"", 1), Entry(encode_key(1), b"", 2)]
    with pytest.raises(ValueError):
        sst_write(tmp_path / "b.sst", 1, bad, seek_floor=100)


def test_scan_charges_seek_only_on_overlap(tmp_path):
    meta = sst_write(tmp_path / "s.sst", 1, _entries([10, 20, 30]), seek_floor=5)
    start = meta.seeks_remaining
    assert sst_scan(meta, KeyRange(encode_key(40), encode_key(50))) == []
    assert meta.seeks_remaining == start
    got = sst_scan(meta, KeyRange(encode_key(15), encode_key(25)))
    assert [e.key for e in got] == [encode_key(20)]
    assert meta.seeks_remaining == start - 1
    # overlapping but empty slice still costs a seek
    got = sst_scan(meta, KeyRange(encode_key(11), encode_key(19)))
    assert got == []
    assert meta.seeks_remaining == start - 2


def test_seek_allowance_rule():
    assert seek_allowance(100, 100) == 100
    assert seek_allowance(16384 * 250, 100) == 250
    assert seek_allowance(16384 * 250, 300) == 300
    assert seek_allowance(0, 7) == 7
