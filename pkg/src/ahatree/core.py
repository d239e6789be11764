"""Shared vocabulary for the index: keys, sequence numbers, entries, ranges, config."""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

Key = bytes
Value = bytes

# Keys are non-empty byte strings ordered lexicographically.  MIN_KEY is the
# smallest legal key; MAX_KEY sits above anything the workloads can produce
# (integer keys encode to exactly 8 bytes).
MIN_KEY: Key = b"\x00"
MAX_KEY: Key = b"\xff" * 16

_U64BE = struct.Struct(">Q")


def encode_key(n: int) -> Key:
    """Encode an unsigned integer as 8 big-endian bytes.

    Big-endian keeps byte order and integer order isomorphic, so integer
    workloads and byte-string internals agree on every comparison.
    """
    return _U64BE.pack(n)


def decode_key(k: Key) -> int:
    """Inverse of encode_key for 8-byte keys; longer keys use their prefix."""
    return int.from_bytes(k[:8].ljust(8, b"\x00"), "big")


class Entry(NamedTuple):
    key: Key
    value: Value
    seq: int


def entry_bytes(e: Entry) -> int:
    # Size accounting is raw key+value length everywhere; seq is bookkeeping.
    return len(e.key) + len(e.value)


class SeqGen:
    """Monotonic sequence numbers, first call returns 1.

    next() on an itertools.count is a single C call, so concurrent writers
    get distinct values without an explicit lock.
    """

    __slots__ = ("_ctr",)

    def __init__(self) -> None:
        self._ctr = itertools.count(1)

    def next_seq(self) -> int:
        return next(self._ctr)


@dataclass(frozen=True)
class KeyRange:
    """Inclusive range [lo, hi] over byte-string keys."""

    lo: Key
    hi: Key

    def __post_init__(self) -> None:
        if not self.lo:
            raise ValueError("range lo must be a non-empty key")
        if self.lo > self.hi:
            raise ValueError("range lo must not exceed hi")

    @property
    def hi_excl(self) -> Key:
        # Smallest byte string strictly above hi.  Converts the inclusive
        # bound to the half-open form used by all internal plumbing.
        return self.hi + b"\x00"

    def contains(self, k: Key) -> bool:
        return self.lo <= k <= self.hi

    def overlaps(self, other: "KeyRange") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def intersect(self, other: "KeyRange") -> Optional["KeyRange"]:
        lo = max(self.lo, other.lo)
        hi = min(self.hi, other.hi)
        if lo > hi:
            return None
        return KeyRange(lo, hi)


FULL_RANGE = KeyRange(MIN_KEY, MAX_KEY)


def span_overlaps(lo: Key, hi_excl: Optional[Key], r: KeyRange) -> bool:
    """Does the half-open span [lo, hi_excl) intersect the inclusive range r?"""
    if hi_excl is not None and r.lo >= hi_excl:
        return False
    return lo <= r.hi


class ConfigError(ValueError):
    """Raised by validate_config; message starts with the violated field name."""


ADAPT_MODES = ("lazy", "eager")
LEAF_TRANSFORMS = ("balanced", "unbalanced")
INSERT_MODES = ("batched", "single")
PACKINGS = ("even", "sound_remedy")


@dataclass
class Config:
    fanout_max: int = 16
    memtable_limit: int = 64 * 1024
    root_lsmt_limit: int = 1024 * 1024
    node_lsmt_limit: int = 256 * 1024
    leaf_page_capacity: int = 64
    level_size_ratio: int = 4
    seek_allowance_per_file: int = 100
    adaptation_enabled: bool = True
    adapt_mode: str = "lazy"
    leaf_transform: str = "balanced"
    insert_mode: str = "batched"
    packing: str = "even"
    seek_compaction_enabled: bool = True
    rng_seed: int = 0

    def with_overrides(self, **kw) -> "Config":
        return replace(self, **kw)


def validate_config(cfg: Config) -> Config:
    """Check structural invariants, reporting the first violated one by name."""
    if cfg.fanout_max < 2:
        raise ConfigError("fanout_max must be at least 2")
    if cfg.leaf_page_capacity < 4:
        raise ConfigError("leaf_page_capacity must be at least 4")
    if cfg.node_lsmt_limit < cfg.memtable_limit:
        raise ConfigError("node_lsmt_limit must be at least memtable_limit")
    if cfg.level_size_ratio < 2:
        raise ConfigError("level_size_ratio must be at least 2")
    if cfg.memtable_limit < 1:
        raise ConfigError("memtable_limit must be positive")
    if cfg.root_lsmt_limit < cfg.memtable_limit:
        raise ConfigError("root_lsmt_limit must be at least memtable_limit")
    if cfg.adapt_mode not in ADAPT_MODES:
        raise ConfigError("adapt_mode must be one of %s" % (ADAPT_MODES,))
    if cfg.leaf_transform not in LEAF_TRANSFORMS:
        raise ConfigError("leaf_transform must be one of %s" % (LEAF_TRANSFORMS,))
    if cfg.insert_mode not in INSERT_MODES:
        raise ConfigError("insert_mode must be one of %s" % (INSERT_MODES,))
    if cfg.packing not in PACKINGS:
        raise ConfigError("packing must be one of %s" % (PACKINGS,))
    if cfg.seek_allowance_per_file < 1:
        raise ConfigError("seek_allowance_per_file must be positive")
    return cfg
