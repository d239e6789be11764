import random

from hypothesis import given, settings
from hypothesis import strategies as st

from ahatree.core import Entry, KeyRange, encode_key
from ahatree.memtable import MemTable


def _e(k: int, v: bytes, seq: int) -> Entry:
    return Entry(encode_key(k), v, seq)


def test_put_until_capacity_reports_full():
    # 8-byte keys + 8-byte values, capacity exactly 4 entries worth
    m = MemTable(capacity=64)
    seq = 0
    for k in range(3):
        seq += 1
        assert m.put(_e(k, b"x" * 8, seq)) is False
    seq += 1
    assert m.put(_e(3, b"x" * 8, seq)) is True
    assert m.approx_bytes == 64


def test_replacement_keeps_one_version_and_adjusts_bytes():
    m = MemTable(capacity=1 << 20)
    m.put(_e(5, b"aa", 1))
    m.put(_e(5, b"bbbb", 2))
    assert len(m) == 1
    assert m.approx_bytes == 8 + 4
    got = m.scan(KeyRange(encode_key(5), encode_key(5)))
    assert got == [_e(5, b"bbbb", 2)]


def test_scan_is_ascending_and_inclusive():
    m = MemTable(capacity=1 << 20)
    for i, k in enumerate([9, 3, 7, 1, 5]):
        m.put(_e(k, b"v", i + 1))
    got = m.scan(KeyRange(encode_key(3), encode_key(7)))
    assert [e.key for e in got] == [encode_key(3), encode_key(5), encode_key(7)]


def test_freeze_drain_empties():
    m = MemTable(capacity=1 << 20)
    for k in range(10):
        m.put(_e(k, b"v", k + 1))
    drained = m.freeze_drain()
    assert [e.key for e in drained] == [encode_key(k) for k in range(10)]
    assert len(m) == 0 and m.approx_bytes == 0
    assert m.scan(KeyRange(encode_key(0), encode_key(100))) == []


def test_remove_span_partitions():
    m = MemTable(capacity=1 << 20)
    for k in range(40, 61):
        m.put(_e(k, b"v", k))
    gone = m.remove_span(encode_key(46), encode_key(51))
    assert [e.key for e in gone] == [encode_key(k) for k in range(46, 51)]
    rest = m.scan(KeyRange(encode_key(40), encode_key(60)))
    assert [e.key for e in rest] == [encode_key(k) for k in list(range(40, 46)) + list(range(51, 61))]


def test_remove_exact_spares_fresher_resident():
    m = MemTable(capacity=1 << 20)
    m.put(_e(1, b"old", 5))
    snapshot = m.scan(KeyRange(encode_key(1), encode_key(1)))
    m.put(_e(1, b"new", 9))
    m.remove_exact(snapshot)
    assert m.get(encode_key(1)) == _e(1, b"new", 9)
    m.remove_exact(m.scan(KeyRange(encode_key(1), encode_key(1))))
    assert m.get(encode_key(1)) is None


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(min_value=0, max_value=200), st.binary(min_size=0, max_size=12)),
        min_size=1,
        max_size=300,
    )
)
def test_matches_sorted_map_oracle(ops):
    m = MemTable(capacity=1 << 30)
    oracle = {}
    for seq, (k, v) in enumerate(ops, start=1):
        m.put(_e(k, v, seq))
        oracle[encode_key(k)] = (v, seq)
    lo, hi = encode_key(50), encode_key(150)
    want = [Entry(k, v, s) for k, (v, s) in sorted(oracle.items()) if lo <= k <= hi]
    assert m.scan(KeyRange(lo, hi)) == want


def test_random_spans_against_oracle():
    rng = random.Random(11)
    m = MemTable(capacity=1 << 30)
    oracle = {}
    for seq in range(1, 2001):
        k = rng.randrange(500)
        v = bytes([seq % 251])
        m.put(_e(k, v, seq))
        oracle[encode_key(k)] = (v, seq)
    for _ in range(100):
        a, b = sorted((rng.randrange(500), rng.randrange(500)))
        got = m.scan(KeyRange(encode_key(a), encode_key(b)))
        want = [Entry(k, v, s) for k, (v, s) in sorted(oracle.items()) if encode_key(a) <= k <= encode_key(b)]
        assert got == want
