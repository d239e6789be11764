"""Command line front end: `bench` runs a workload, `verify` checks invariants."""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

from .baselines import BPlusTreeIndex
from .bench import build_driver, emit_csv, emit_plot_data, run_bench, scan_checksum
from .core import Config, KeyRange, MAX_KEY, MIN_KEY, validate_config
from .tree import AhaTree
from .workload import Phase, PutOp, WorkloadSpec, gen_ops, hotspot_range, load_ops

PHASE_KINDS = {"read": "read_heavy", "write": "write_heavy", "mixed": "mixed"}


def _parse_phases(text: str, read_fraction: float):
    phases = []
    for part in text.split(","):
        kind, _, count = part.partition(":")
        if kind not in PHASE_KINDS or not count.isdigit():
            raise ValueError(f"bad phase {part!r}; want kind:count")
        phases.append(Phase(PHASE_KINDS[kind], int(count), read_fraction))
    return tuple(phases)


def _parse_pair(text: str, what: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"bad {what} {text!r}; want LO,HI")
    return int(parts[0]), int(parts[1])


def _add_bench_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--index", required=True, choices=("aha", "btree", "lsm"))
    p.add_argument("--distribution", default="zipfian",
                   choices=("uniform", "zipfian"))
    p.add_argument("--zipf-s", type=float, default=0.99)
    p.add_argument("--key-domain", type=int, default=100_000)
    p.add_argument("--phases", default="read:100000,write:100000,read:100000")
    p.add_argument("--read-fraction", type=float, default=0.5)
    p.add_argument("--scan-size", type=int, default=100)
    p.add_argument("--scan-size-dynamic", default=None, metavar="MIN,MAX")
    p.add_argument("--hotspot", default=None, metavar="LO,HI")
    p.add_argument("--adaptation", default="on", choices=("on", "off"))
    p.add_argument("--adapt-mode", default="lazy", choices=("lazy", "eager"))
    p.add_argument("--seek-compaction", default="on", choices=("on", "off"))
    p.add_argument("--leaf-transform", default="balanced",
                   choices=("balanced", "unbalanced"))
    p.add_argument("--insert-mode", default="batched",
                   choices=("batched", "single"))
    p.add_argument("--packing", default="even", choices=("even", "sound-remedy"))
    p.add_argument("--window", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", default=None, metavar="PATH.csv")
    p.add_argument("--plot-out", default=None, metavar="PATH.dat")
    p.add_argument("--exec", dest="exec_mode", default="thread",
                   choices=("thread", "inline"))
    p.add_argument("--readers", type=int, default=0)


def _bench_config(args) -> Config:
    return Config(
        adaptation_enabled=args.adaptation == "on",
        adapt_mode=args.adapt_mode,
        seek_compaction_enabled=args.seek_compaction == "on",
        leaf_transform=args.leaf_transform,
        insert_mode=args.insert_mode,
        packing=args.packing.replace("-", "_"),
        rng_seed=args.seed,
    )


def _bench_spec(args) -> WorkloadSpec:
    return WorkloadSpec(
        key_domain=args.key_domain,
        phases=_parse_phases(args.phases, args.read_fraction),
        distribution=args.distribution,
        zipf_s=args.zipf_s,
        scan_size=args.scan_size,
        scan_size_range=(_parse_pair(args.scan_size_dynamic, "scan size")
                         if args.scan_size_dynamic else None),
        hotspot=(_parse_pair(args.hotspot, "hotspot")
                 if args.hotspot else None),
        seed=args.seed,
    )


def cmd_bench(args) -> int:
    spec = _bench_spec(args)
    cfg = _bench_config(args)
    validate_config(cfg)
    if args.data_dir is not None:
        report = run_bench(spec, args.index, cfg, Path(args.data_dir),
                           window=args.window, mode=args.exec_mode,
                           readers=args.readers)
    else:
        with tempfile.TemporaryDirectory(prefix="ahabench-") as tmp:
            report = run_bench(spec, args.index, cfg, Path(tmp),
                               window=args.window, mode=args.exec_mode,
                               readers=args.readers)
    if args.out:
        emit_csv(report.windows, args.out)
    if args.plot_out:
        emit_plot_data(report.windows, args.plot_out)
    means = " ".join(f"{kind}={tp:.0f}" for kind, tp in
                     report.phase_mean_throughput)
    print(f"index={report.index} ops={report.total_ops} "
          f"elapsed={report.elapsed_s:.2f}s checksum={report.checksum:#018x} "
          f"windows={len(report.windows)} "
          f"adapt_complete_op={report.adapt_complete_op} "
          f"mean_ops_s[{means}]")
    return 0


EVERYTHING = KeyRange(MIN_KEY, MAX_KEY)


def _verify_one(args, seed: int, results) -> None:
    spec = WorkloadSpec(
        key_domain=2000,
        phases=(Phase("mixed", 20_000, read_fraction=0.4),),
        distribution="zipfian", zipf_s=0.9,
        scan_size=20, hotspot=(0, 199), seed=seed)
    cfg = Config(rng_seed=seed)
    oracle = {}
    for k, v in load_ops(spec):
        oracle[k] = v
    for op in gen_ops(spec):
        if isinstance(op, PutOp):
            oracle[op.key] = op.value
    want = sorted(oracle.items())

    checksums = {}
    with tempfile.TemporaryDirectory(prefix="ahaverify-") as tmp:
        for index in ("aha", "btree", "lsm"):
            drv = build_driver(index, Path(tmp) / index, cfg,
                               hotspot_range(spec))
            drv.load(load_ops(spec))
            drv.arm()
            for op in gen_ops(spec):
                if isinstance(op, PutOp):
                    drv.put(op.key, op.value)
                else:
                    drv.scan(op.r)
                drv.tick()
            drv.quiesce()
            got = [(e.key, e.value) for e in drv.full_entries()]
            results[f"oracle-equivalence[{index}] seed={seed}"] = got == want
            checksums[index] = scan_checksum(drv.full_entries())
            if index == "aha":
                tree: AhaTree = drv.tree
                results[f"freshness-invariant seed={seed}"] = (
                    tree.check_freshness_invariant() == [])
                results[f"interval-partition seed={seed}"] = (
                    tree.check_intervals() == [])
            elif index == "btree":
                bt: BPlusTreeIndex = drv.index
                results[f"btree-structure seed={seed}"] = (
                    bt.check_structure() == [])
    results[f"cross-index-checksum seed={seed}"] = (
        len(set(checksums.values())) == 1)


def cmd_verify(args) -> int:
    results = {}
    for seed in args.seeds:
        _verify_one(args, seed, results)
    failed = 0
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        failed += not ok
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    top = argparse.ArgumentParser(prog="ahatree")
    sub = top.add_subparsers(dest="command", required=True)
    _add_bench_args(sub.add_parser("bench", help="run a workload"))
    vp = sub.add_parser("verify", help="run invariant checks")
    vp.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    args = top.parse_args(argv)
    try:
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_verify(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
