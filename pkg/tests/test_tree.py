import random

from ahatree.core import Config, Entry, KeyRange, encode_key
from ahatree.tree import (
    INTERNAL,
    LEAF_BUFFERED,
    LEAF_PAGED,
    AhaTree,
    write_page,
)

FULL = KeyRange(encode_key(0), encode_key(2**63))


def small_cfg(**kw):
    base = dict(
        fanout_max=4,
        memtable_limit=256,
        root_lsmt_limit=2048,
        node_lsmt_limit=1024,
        leaf_page_capacity=4,
        level_size_ratio=2,
    )
    base.update(kw)
    return Config(**base)


def k(n):
    return encode_key(n)


def v(n):
    return n.to_bytes(8, "little")


def tree_with_forged_children(tmp_path, cfg=None):
    """Root routing [40] over a paged left leaf and a buffered right leaf."""
    t = AhaTree(tmp_path, cfg or small_cfg())
    left = t._new_node(LEAF_PAGED, b"", k(40), 1)
    right = t._new_node(LEAF_BUFFERED, k(40), None, 1, buffered=True)
    with t.struct_lock:
        t.nodes[left.id] = left
        t.nodes[right.id] = right
        t.parents[left.id] = t.parents[right.id] = 0
        root = t.nodes[0]
        root.children = [left.id, right.id]
        root.routing_keys = [k(40)]
        t._write_manifest_locked()
    return t, left, right


def test_put_then_point_scan(tmp_path):
    t = AhaTree(tmp_path, small_cfg())
    t.put(k(7), v(1))
    got = t.scan(KeyRange(k(7), k(7)))
    assert [(e.key, e.value) for e in got] == [(k(7), v(1))]


def test_second_put_wins(tmp_path):
    t = AhaTree(tmp_path, small_cfg())
    t.put(k(7), v(1))
    t.put(k(7), v(2))
    got = t.scan(KeyRange(k(7), k(7)))
    assert [(e.key, e.value) for e in got] == [(k(7), v(2))]


def test_scan_empty_index(tmp_path):
    t = AhaTree(tmp_path, small_cfg())
    assert t.scan(FULL) == []


def test_scan_merges_page_buffer_and_memtable_sources(tmp_path):
    t, left, right = tree_with_forged_children(tmp_path)
    pg = write_page(t._pages_dir(left.id), t.file_ids, [Entry(k(35), b"a", 1)], 4, 0.25, 100)
    left.pages = (pg,)
    # reuse 35's spot: fixture keys 35 (page), 47 (leaf buffer), 49 (root mem)
    right.handle.put(Entry(k(47), b"b", 2))
    t.root_handle.put(Entry(k(49), b"c", 3))
    seen = []
    t.touch_sink = seen.append
    got, sources = t.scan_attributed(KeyRange(k(35), k(49)))
    assert [(e.key, e.value) for e in got] == [(k(35), b"a"), (k(47), b"b"), (k(49), b"c")]
    tags = {(nid, tag) for nid, tag, _ in sources}
    assert (left.id, "page") in tags
    assert (right.id, "mem") in tags or (right.id, "file") in tags
    assert (0, "mem") in tags
    assert right.id in seen[0].node_ids
    assert t.check_freshness_invariant() == []
    assert t.check_intervals() == []


def test_level_empty_routes_by_routing_keys(tmp_path):
    t = AhaTree(tmp_path, small_cfg(fanout_max=8))
    kids = []
    bounds = [b"", k(10), k(20), None]
    with t.struct_lock:
        root = t.nodes[0]
        for i in range(3):
            kid = t._new_node(LEAF_BUFFERED, bounds[i], bounds[i + 1], 1, buffered=True)
            t.nodes[kid.id] = kid
            t.parents[kid.id] = 0
            kids.append(kid)
        root.children = [kid.id for kid in kids]
        root.routing_keys = [k(10), k(20)]
    for n, seq in ((5, 1), (15, 2), (25, 3)):
        t.root_handle.put(Entry(k(n), v(n), seq))
    t.level_empty(0)
    assert [e.key for e in kids[0].handle.scan(FULL)] == [k(5)]
    assert [e.key for e in kids[1].handle.scan(FULL)] == [k(15)]
    assert [e.key for e in kids[2].handle.scan(FULL)] == [k(25)]
    # parent fully drained
    assert t.root_handle.scan(FULL) == []
    assert t.check_freshness_invariant() == []


def test_level_empty_is_scan_invisible(tmp_path):
    t = AhaTree(tmp_path, small_cfg(fanout_max=8, root_lsmt_limit=1 << 20))
    rng = random.Random(3)
    for _ in range(400):
        t.put(k(rng.randrange(1000)), rng.randbytes(8))
    t.bootstrap()  # force structure even though the root is under budget
    before = t.scan(FULL)
    t.level_empty(0)
    assert t.scan(FULL) == before
    assert t.check_intervals() == []


def test_bootstrap_builds_fanout_children(tmp_path):
    t = AhaTree(tmp_path, small_cfg(fanout_max=4, root_lsmt_limit=512, memtable_limit=128))
    n = 0
    while not t.nodes[0].children:
        t.put(k(n), v(n))
        t.maintenance_step()
        n += 1
    root = t.nodes[0]
    assert len(root.children) == 4
    assert len(root.routing_keys) == 3
    assert all(t.nodes[c].kind == LEAF_BUFFERED for c in root.children)
    assert t.check_intervals() == []
    got = t.scan(FULL)
    assert [e.key for e in got] == [k(i) for i in range(n)]


def test_leaf_split_fan_and_equal_runs(tmp_path):
    cfg = small_cfg(fanout_max=16, node_lsmt_limit=1024)
    t, left, right = tree_with_forged_children(tmp_path, cfg)
    # exactly 2x the leaf budget in 16-byte entries -> 4 children
    ents = [Entry(k(100 + i), v(i), i + 1) for i in range(128)]
    right.handle.bulk_install(ents)
    before = t.scan(FULL)
    t.leaf_split(right.id)
    root = t.nodes[0]
    new_ids = root.children[1:]
    assert len(new_ids) == 4
    counts = [len(t.nodes[c].handle.scan(FULL)) for c in new_ids]
    assert counts == [32, 32, 32, 32]
    lows = [t.nodes[c].lo for c in new_ids]
    assert lows == sorted(lows)
    assert t.scan(FULL) == before
    assert right.id not in t.nodes
    assert t.check_intervals() == []


def test_split_propagates_to_parent_and_root(tmp_path):
    cfg = small_cfg(fanout_max=4, memtable_limit=128, root_lsmt_limit=512, node_lsmt_limit=512)
    t = AhaTree(tmp_path, cfg)
    oracle = {}
    seqno = 0
    rng = random.Random(11)
    for _ in range(4000):
        n = rng.randrange(4000)
        seqno += 1
        t.put(k(n), v(seqno))
        oracle[k(n)] = v(seqno)
        t.maintenance_step()
    t.quiesce()
    depths = [n.depth for n in t.nodes.values()]
    assert max(depths) >= 2  # the root split at least once
    assert t.check_intervals() == []
    assert t.check_freshness_invariant() == []
    got = t.scan(FULL)
    assert [(e.key, e.value) for e in got] == sorted(oracle.items())


def test_random_ops_match_oracle_with_interleaved_scans(tmp_path):
    cfg = small_cfg(fanout_max=6, memtable_limit=256, root_lsmt_limit=2048, node_lsmt_limit=1024)
    t = AhaTree(tmp_path, cfg)
    rng = random.Random(7)
    oracle = {}
    seqno = 0
    for op in range(1, 12_001):
        n = rng.randrange(3000)
        seqno += 1
        t.put(k(n), v(seqno))
        oracle[k(n)] = v(seqno)
        if op % 40 == 0:
            t.maintenance_step()
        if op % 1500 == 0:
            a, b = sorted((rng.randrange(3000), rng.randrange(3000)))
            r = KeyRange(k(a), k(b))
            want = [(key, val) for key, val in sorted(oracle.items()) if r.contains(key)]
            assert [(e.key, e.value) for e in t.scan(r)] == want
    t.quiesce()
    assert [(e.key, e.value) for e in t.scan(FULL)] == sorted(oracle.items())
    assert t.check_freshness_invariant() == []
    assert t.check_intervals() == []
    manifest = (t.dir / "TREE").read_text().strip().splitlines()
    assert len(manifest) == len(t.nodes)


def test_freshness_checker_reports_planted_violation(tmp_path):
    t, left, right = tree_with_forged_children(tmp_path)
    right.handle.put(Entry(k(50), v(1), 5))
    t.root_handle.put(Entry(k(50), v(2), 1))  # stale above fresh
    bad = t.check_freshness_invariant()
    assert len(bad) == 1
    key, shallow_id, shallow_seq, deep_id, deep_seq = bad[0]
    assert key == k(50) and (shallow_id, deep_id) == (0, right.id)
    assert (shallow_seq, deep_seq) == (1, 5)


def test_level_empty_merges_into_paged_leaf(tmp_path):
    t, left, right = tree_with_forged_children(tmp_path)
    base = [Entry(k(n), v(n), i + 1) for i, n in enumerate((10, 12, 14, 16))]
    pg = write_page(t._pages_dir(left.id), t.file_ids, base, 4, 1.0, 100)
    left.pages = (pg,)
    seqno = 10
    for n in (11, 13, 15, 17, 18):
        seqno += 1
        t.root_handle.put(Entry(k(n), v(n), seqno))
    t.level_empty(0)
    assert t.root_handle.scan(FULL) == []
    got = [e.key for e in t.scan(KeyRange(k(10), k(20)))]
    assert got == [k(n) for n in (10, 11, 12, 13, 14, 15, 16, 17, 18)]
    assert len(left.pages) == 3  # 9 entries over capacity-4 pages
    assert t.page_splits == 1
    assert t.pages_created == 2
    assert all(len(p.entries) <= 4 for p in left.pages)
    # pages persisted one file each
    files = sorted((t._pages_dir(left.id)).glob("*.sst"))
    assert len(files) == 3


def test_page_update_in_place_keeps_page_count(tmp_path):
    t, left, right = tree_with_forged_children(tmp_path)
    base = [Entry(k(n), v(0), i + 1) for i, n in enumerate((10, 12, 14))]
    pg = write_page(t._pages_dir(left.id), t.file_ids, base, 4, 0.75, 100)
    left.pages = (pg,)
    t.root_handle.put(Entry(k(12), v(99), 50))
    t.level_empty(0)
    assert len(left.pages) == 1
    assert t.pages_created == 0
    got = t.scan(KeyRange(k(12), k(12)))
    assert got == [Entry(k(12), v(99), 50)]


def test_single_insert_bypasses_root_for_adapted_span(tmp_path):
    cfg = small_cfg(insert_mode="single")
    t, left, right = tree_with_forged_children(tmp_path, cfg)
    base = [Entry(k(n), v(0), i + 1) for i, n in enumerate((10, 14))]
    pg = write_page(t._pages_dir(left.id), t.file_ids, base, 4, 0.5, 100)
    left.pages = (pg,)
    t.single_spans = [(b"", k(40))]
    t.put(k(12), v(7))
    assert t.root_handle.scan(KeyRange(k(12), k(12))) == []
    assert [e.key for e in left.pages[0].entries] == [k(10), k(12), k(14)]
    got = t.scan(KeyRange(k(12), k(12)))
    assert got and got[0].value == v(7)
    # outside the adapted span the batched path is used
    t.put(k(55), v(8))
    assert [e.key for e in t.root_handle.scan(KeyRange(k(55), k(55)))] == [k(55)]


def test_single_insert_splits_full_page_in_half(tmp_path):
    cfg = small_cfg(insert_mode="single")
    t, left, right = tree_with_forged_children(tmp_path, cfg)
    base = [Entry(k(n), v(0), i + 1) for i, n in enumerate((10, 12, 14, 16))]
    pg = write_page(t._pages_dir(left.id), t.file_ids, base, 4, 1.0, 100)
    left.pages = (pg,)
    t.single_spans = [(b"", k(40))]
    t.put(k(11), v(1))
    assert len(left.pages) == 2
    assert [len(p.entries) for p in left.pages] == [3, 2]
    assert t.page_splits == 1
    got = [e.key for e in t.scan(KeyRange(k(10), k(16)))]
    assert got == [k(n) for n in (10, 11, 12, 14, 16)]
