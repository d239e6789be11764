import random

import pytest

from ahatree.adaptation import (
    COMPLETE,
    QUEUED,
    AdaptationEngine,
    _fill_fraction,
    _key_point,
    pack_runs,
)
from ahatree.core import MIN_KEY, Config, Entry, KeyRange, encode_key
from ahatree.tree import LEAF_BUFFERED, LEAF_PAGED, AhaTree

FULL = KeyRange(encode_key(0), encode_key(2**63))


def k(n):
    return encode_key(n)


def v(n):
    return n.to_bytes(8, "little")


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


def forge_two_leaves(tmp_path, cfg=None, split_at=48):
    t = AhaTree(tmp_path, cfg or small_cfg())
    a = t._new_node(LEAF_BUFFERED, b"", k(split_at), 1, buffered=True)
    b = t._new_node(LEAF_BUFFERED, k(split_at), None, 1, buffered=True)
    with t.struct_lock:
        for kid in (a, b):
            t.nodes[kid.id] = kid
            t.parents[kid.id] = 0
        root = t.nodes[0]
        root.children = [a.id, b.id]
        root.routing_keys = [k(split_at)]
    return t, a, b


def test_disabled_adaptation_keeps_queue_empty(tmp_path):
    t = AhaTree(tmp_path, small_cfg(adaptation_enabled=False))
    eng = AdaptationEngine(t)
    t.put(k(5), v(1))
    t.scan(KeyRange(k(0), k(10)))
    assert eng.queue_view() == []
    assert eng.adapt_step() is False


def test_lazy_scans_merge_overlapping_ranges(tmp_path):
    t = AhaTree(tmp_path, small_cfg())
    eng = AdaptationEngine(t)
    for n in (46, 47, 50):
        t.put(k(n), v(n))
    t.scan(KeyRange(k(46), k(48)))
    t.scan(KeyRange(k(47), k(50)))
    view = eng.queue_view()
    assert len(view) == 1
    assert view[0][0] == KeyRange(k(46), k(50))
    assert view[0][1] == QUEUED


def test_lazy_disjoint_ranges_stay_separate(tmp_path):
    t = AhaTree(tmp_path, small_cfg())
    eng = AdaptationEngine(t)
    t.put(k(15), v(15))
    t.put(k(35), v(35))
    t.scan(KeyRange(k(10), k(20)))
    t.scan(KeyRange(k(30), k(40)))
    assert len(eng.queue_view()) == 2


def test_scans_finding_no_buffered_data_enqueue_nothing(tmp_path):
    # a range with nothing to adapt never enters the queue
    t = AhaTree(tmp_path, small_cfg())
    eng = AdaptationEngine(t)
    t.scan(KeyRange(k(10), k(20)))
    assert eng.queue_view() == []


def test_eager_mode_preseeds_declared_hotspot(tmp_path):
    t = AhaTree(tmp_path, small_cfg(adapt_mode="eager"))
    eng = AdaptationEngine(t, hotspot=KeyRange(k(46), k(50)))
    assert eng.queue_view() == [(KeyRange(k(46), k(50)), QUEUED)]
    # touchsets do not add ranges in eager mode
    t.scan(KeyRange(k(100), k(200)))
    assert len(eng.queue_view()) == 1


def test_adapt_step_with_empty_queue_does_nothing(tmp_path):
    t = AhaTree(tmp_path, small_cfg())
    eng = AdaptationEngine(t)
    assert eng.adapt_step() is False


def test_full_range_adaptation_of_bare_root(tmp_path):
    t = AhaTree(tmp_path, small_cfg())
    eng = AdaptationEngine(t)
    oracle = {}
    for n in range(120):
        t.put(k(n), v(n))
        oracle[k(n)] = v(n)
    t.root_handle.flush_memtable()
    t.scan(FULL)
    steps = eng.run_to_completion()
    assert steps > 0
    assert eng.queue_view()[0][1] == COMPLETE
    assert t.root_handle.scan(FULL) == []
    got, sources = t.scan_attributed(FULL)
    assert [(e.key, e.value) for e in got] == sorted(oracle.items())
    assert {tag for _, tag, _ in sources} == {"page"}
    frac, stats = eng.progress()
    assert frac == 1.0
    assert stats.ranges_completed == 1
    assert stats.pages_created > 0
    assert t.check_freshness_invariant() == []
    assert t.check_intervals() == []


def test_hotspot_spanning_two_leaves(tmp_path):
    t, a, b = forge_two_leaves(tmp_path)
    oracle = {}
    seq = 0
    for n in range(40, 48):
        seq += 1
        a.handle.put(Entry(k(n), v(n), seq))
        oracle[k(n)] = v(n)
    for n in range(48, 56):
        seq += 1
        b.handle.put(Entry(k(n), v(n), seq))
        oracle[k(n)] = v(n)
    for n in range(44, 53):  # fresher versions land at the root
        seq += 1
        t.root_handle.put(Entry(k(n), v(n + 100), seq))
        oracle[k(n)] = v(n + 100)
    t.root_handle.flush_memtable()
    eng = AdaptationEngine(t)
    t.scan(KeyRange(k(46), k(50)))
    steps = eng.run_to_completion()
    # one root drain, two partial leaf transforms, one completion mark
    assert steps == 4
    assert eng.queue_view()[0][1] == COMPLETE
    t.touch_sink = None  # observation scans below must not feed the queue

    got, sources = t.scan_attributed(KeyRange(k(46), k(50)))
    assert [(e.key, e.value) for e in got] == [
        (k(n), oracle[k(n)]) for n in range(46, 51)]
    assert {tag for _, tag, _ in sources} == {"page"}, sources

    # cold keys outside the hotspot are still buffered, not paged
    got_cold, cold_sources = t.scan_attributed(KeyRange(k(40), k(45)))
    assert [(e.key, e.value) for e in got_cold] == [
        (k(n), oracle[k(n)]) for n in range(40, 46)]
    assert "page" not in {tag for _, tag, _ in cold_sources}
    # the root's straddling file was co-flushed: nothing for [44,45] at the root
    assert t.root_handle.scan(KeyRange(k(40), k(45))) == []

    frac, stats = eng.progress()
    assert frac == 1.0
    assert stats.entries_flushed > 0
    assert stats.cold_bytes_coflushed > 0

    full = t.scan(FULL)
    assert [(e.key, e.value) for e in full] == sorted(oracle.items())
    assert t.check_freshness_invariant() == []
    assert t.check_intervals() == []


def test_adaptation_is_scan_invisible_at_step_boundaries(tmp_path):
    t = AhaTree(tmp_path, small_cfg(fanout_max=6))
    rng = random.Random(5)
    for _ in range(600):
        t.put(k(rng.randrange(500)), rng.randbytes(8))
        t.maintenance_step()
    t.quiesce()
    eng = AdaptationEngine(t)
    t.scan(KeyRange(k(100), k(400)))
    before = t.scan(FULL)
    while eng.adapt_step():
        assert t.scan(FULL) == before
    assert t.scan(FULL) == before


def test_transform_modes_agree_on_memtable_only_leaf(tmp_path):
    layouts = {}
    for mode in ("balanced", "unbalanced"):
        t, a, b = forge_two_leaves(tmp_path / mode, small_cfg(leaf_transform=mode))
        for i, n in enumerate(range(10, 20)):
            a.handle.put(Entry(k(n), v(n), i + 1))
        eng = AdaptationEngine(t)
        t.scan(KeyRange(MIN_KEY, k(48)))  # covers leaf a exactly
        eng.run_to_completion()
        got, sources = t.scan_attributed(KeyRange(k(10), k(19)))
        paged = [nid for nid, tag, _ in sources if tag == "page"]
        assert paged
        node = t.nodes[paged[0]]
        layouts[mode] = (
            [(e.key, e.value) for e in got],
            [tuple(e.key for e in pg.entries) for pg in node.pages],
        )
    assert layouts["balanced"] == layouts["unbalanced"]


def test_unbalanced_transform_pages_each_file_separately(tmp_path):
    cfg = small_cfg(leaf_transform="unbalanced", leaf_page_capacity=64,
                    node_lsmt_limit=1 << 16)
    t, a, b = forge_two_leaves(tmp_path, cfg, split_at=10_000)
    run1 = [Entry(k(n), v(n), n + 1) for n in range(100)]
    run2 = [Entry(k(n), v(n), n + 1) for n in range(200, 500)]
    a.handle.bulk_install(run1)
    a.handle.bulk_install(run2)
    eng = AdaptationEngine(t)
    t.scan(KeyRange(MIN_KEY, k(10_000)))  # covers all of leaf a's interval
    eng.run_to_completion()
    root = t.nodes[0]
    paged = [t.nodes[c] for c in root.children if t.nodes[c].kind == LEAF_PAGED]
    counts = sorted(len(n.pages) for n in paged)
    assert counts == [2, 5]  # ceil(100/64), ceil(300/64)
    # pure file-to-page assignment rewrites nothing
    assert eng.transform_bytes == 0
    got = t.scan(KeyRange(k(0), k(9999)))
    assert len(got) == 400
    assert t.check_intervals() == []


def test_balanced_rewrites_more_than_unbalanced(tmp_path):
    seen = {}
    for mode in ("balanced", "unbalanced"):
        cfg = small_cfg(leaf_transform=mode, leaf_page_capacity=16,
                        node_lsmt_limit=1 << 16)
        t, a, b = forge_two_leaves(tmp_path / mode, cfg, split_at=10_000)
        a.handle.bulk_install([Entry(k(n), v(n), n + 1) for n in range(300)])
        a.handle.bulk_install([Entry(k(n), v(n), n + 1) for n in range(400, 700)])
        # small fresh overlay that only overlaps the first file
        for i, n in enumerate((5, 7, 9)):
            a.handle.put(Entry(k(n), v(n + 1000), 10_000 + i))
        a.handle.flush_memtable()
        eng = AdaptationEngine(t)
        t.scan(KeyRange(MIN_KEY, k(10_000)))
        eng.run_to_completion()
        seen[mode] = eng.transform_bytes
        assert t.scan(KeyRange(k(0), k(9999)))
    assert 0 < seen["unbalanced"] < seen["balanced"]


def test_pack_runs_even_split(tmp_path):
    ents = [Entry(k(n), v(n), n + 1) for n in range(10)]
    runs = pack_runs(ents, "even", 4)
    assert [len(r) for r, _ in runs] == [4, 3, 3]
    assert [e for r, _ in runs for e in r] == ents


def test_pack_runs_empty_stream():
    assert pack_runs([], "even", 4) == []
    assert pack_runs([], "sound_remedy", 4) == []


def test_pack_runs_sound_remedy_schedule():
    ents = [Entry(k(n), v(n), n + 1) for n in range(1000)]
    runs = pack_runs(ents, "sound_remedy", 64)
    assert [e for r, _ in runs for e in r] == ents
    for i, (run, fill) in enumerate(runs):
        assert fill == pytest.approx(_fill_fraction(i))
        assert 0.5 <= fill < 0.9
        if i < len(runs) - 1:
            assert len(run) == int(64 * _fill_fraction(i))
        else:
            assert len(run) <= int(64 * _fill_fraction(i))


def test_key_point_conversions():
    assert _key_point(b"") == 0
    assert _key_point(None) == 1 << 64
    assert _key_point(k(50)) == 50
    assert _key_point(k(50) + b"\x00") == 51  # exclusive bound just above 50


def test_progress_half_span(tmp_path):
    t, a, b = forge_two_leaves(tmp_path, split_at=50)
    b.handle.put(Entry(k(60), v(1), 1))
    eng = AdaptationEngine(t)
    t.scan(KeyRange(k(0), k(99)))
    frac, _ = eng.progress()
    assert frac == pytest.approx(0.5)


def test_progress_one_with_empty_queue(tmp_path):
    t = AhaTree(tmp_path, small_cfg())
    eng = AdaptationEngine(t)
    frac, stats = eng.progress()
    assert frac == 1.0
    assert stats.ranges_completed == 0


def test_redirtied_complete_range_requeues_and_recovers(tmp_path):
    cfg = small_cfg(adapt_mode="eager")
    t = AhaTree(tmp_path, cfg)
    eng = AdaptationEngine(t, hotspot=KeyRange(k(0), k(199)))
    for n in range(200):
        t.put(k(n), v(n))
    t.root_handle.flush_memtable()
    eng.run_to_completion()
    assert eng.progress()[0] == 1.0

    # new writes into the adapted region, flushed into root files
    for n in range(50, 90):
        t.put(k(n), v(n + 1000))
    t.root_handle.flush_memtable()
    frac, _ = eng.progress()
    assert frac < 1.0
    # reporting alone must not schedule rework; a read does
    assert eng.queue_view()[0][1] == COMPLETE
    t.scan(KeyRange(k(50), k(89)))
    assert eng.queue_view()[0][1] == QUEUED
    eng.run_to_completion()
    assert eng.progress()[0] == 1.0
    got = t.scan(KeyRange(k(50), k(89)))
    assert [e.value for e in got] == [v(n + 1000) for n in range(50, 90)]
    assert t.check_freshness_invariant() == []


def test_completion_registers_single_insert_span(tmp_path):
    t = AhaTree(tmp_path, small_cfg(insert_mode="single"))
    eng = AdaptationEngine(t)
    for n in range(80):
        t.put(k(n), v(n))
    t.root_handle.flush_memtable()
    t.scan(KeyRange(k(0), k(79)))
    eng.run_to_completion()
    assert t.single_spans == [(k(0), k(79) + b"\x00")]
    t.put(k(40), v(9999))
    assert t.root_handle.scan(KeyRange(k(40), k(40))) == []
    got, sources = t.scan_attributed(KeyRange(k(40), k(40)))
    assert got[0].value == v(9999)
    assert {tag for _, tag, _ in sources} == {"page"}
