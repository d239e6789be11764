"""Deterministic workload generation for the bench.

A workload is a key domain [0, n), a draw distribution (uniform or Zipfian
with rank 1 mapped to key 0), and an ordered list of phases.  Reads are range
scans whose start key comes from the same distribution as writes; widths are
fixed or drawn per query from [min, max].  When a hotspot is declared, reads
in read-heavy phases redraw until the start key falls inside it.

Inserts happen only while loading: ``load_ops`` emits every domain key once
in a seeded shuffle.  Phase writes are updates over the loaded population.
Values are the 8-byte little-endian global op counter, so any two runs with
the same seed produce identical streams and any op's origin is recoverable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from math import exp, expm1, floor, log, log1p
from typing import Iterator, NamedTuple, Optional, Tuple, Union

from .core import KeyRange, encode_key

READ_HEAVY = "read_heavy"
WRITE_HEAVY = "write_heavy"
MIXED = "mixed"


class PutOp(NamedTuple):
    phase: int
    key: bytes
    value: bytes


class ScanOp(NamedTuple):
    phase: int
    r: KeyRange


Op = Union[PutOp, ScanOp]


@dataclass(frozen=True)
class Phase:
    kind: str
    ops: int
    read_fraction: float = 0.5    # consulted only for mixed phases


@dataclass(frozen=True)
class WorkloadSpec:
    key_domain: int
    phases: Tuple[Phase, ...]
    distribution: str = "uniform"         # uniform | zipfian
    zipf_s: float = 0.99
    scan_size: int = 100
    scan_size_range: Optional[Tuple[int, int]] = None
    hotspot: Optional[Tuple[int, int]] = None   # inclusive key bounds
    seed: int = 0


def validate_spec(spec: WorkloadSpec) -> None:
    if spec.key_domain < 1:
        raise ValueError("key_domain must be positive")
    if spec.distribution not in ("uniform", "zipfian"):
        raise ValueError(f"unknown distribution {spec.distribution!r}")
    if spec.zipf_s < 0:
        raise ValueError("zipfian exponent must be >= 0")
    if not spec.phases:
        raise ValueError("at least one phase required")
    for p in spec.phases:
        if p.kind not in (READ_HEAVY, WRITE_HEAVY, MIXED):
            raise ValueError(f"unknown phase kind {p.kind!r}")
        if p.ops < 1:
            raise ValueError("phase op_count must be >= 1")
        if not 0.0 <= p.read_fraction <= 1.0:
            raise ValueError("read_fraction must be within [0, 1]")
    if spec.scan_size_range is not None:
        lo, hi = spec.scan_size_range
        if not 1 <= lo <= hi:
            raise ValueError("dynamic scan size needs 1 <= min <= max")
    elif spec.scan_size < 1:
        raise ValueError("scan_size must be >= 1")
    if spec.hotspot is not None:
        lo, hi = spec.hotspot
        if not 0 <= lo <= hi < spec.key_domain:
            raise ValueError("hotspot must lie within the key domain")


def hotspot_range(spec: WorkloadSpec) -> Optional[KeyRange]:
    if spec.hotspot is None:
        return None
    lo, hi = spec.hotspot
    return KeyRange(encode_key(lo), encode_key(hi))


class ZipfSampler:
    """Zipf(n, s) ranks in [1, n] by rejection inversion; exact for any s > 0.

    The instrumented CDF trick: integrate the unnormalized mass h(x) = x^-s,
    invert the integral for a proposal, and accept with probability
    h(k) / (bound at k).  No tables, so huge domains cost nothing up front,
    and the draw sequence depends only on the supplied RNG.
    """

    def __init__(self, n: int, s: float, rng: random.Random):
        if n < 1:
            raise ValueError("domain must be non-empty")
        if s < 0:
            raise ValueError("exponent must be >= 0")
        self.n = n
        self.s = s
        self.rng = rng
        if s > 0:
            self._h_x1 = self._h_integral(1.5) - 1.0
            self._h_n = self._h_integral(n + 0.5)
            self._threshold = 2.0 - self._h_integral_inverse(
                self._h_integral(2.5) - self._h(2.0))

    def sample(self) -> int:
        if self.s == 0.0:
            return self.rng.randrange(self.n) + 1
        while True:
            u = self._h_n + self.rng.random() * (self._h_x1 - self._h_n)
            x = self._h_integral_inverse(u)
            k = floor(x + 0.5)
            if k < 1:
                k = 1
            elif k > self.n:
                k = self.n
            if (k - x <= self._threshold
                    or u >= self._h_integral(k + 0.5) - self._h(k)):
                return k

    def _h(self, x: float) -> float:
        return exp(-self.s * log(x))

    def _h_integral(self, x: float) -> float:
        lx = log(x)
        return _helper2((1.0 - self.s) * lx) * lx

    def _h_integral_inverse(self, x: float) -> float:
        t = x * (1.0 - self.s)
        if t < -1.0:
            t = -1.0              # clamp round-off below the pole
        return exp(_helper1(t) * x)


def _helper1(x: float) -> float:
    if abs(x) > 1e-8:
        return log1p(x) / x
    return 1.0 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x))


def _helper2(x: float) -> float:
    if abs(x) > 1e-8:
        return expm1(x) / x
    return 1.0 + x * 0.5 * (1.0 + x * (1.0 / 3.0) * (1.0 + 0.25 * x))


def _value(counter: int) -> bytes:
    return counter.to_bytes(8, "little")


def load_ops(spec: WorkloadSpec) -> Iterator[Tuple[bytes, bytes]]:
    """Every domain key exactly once, shuffled by the seed; values count from 0."""
    keys = list(range(spec.key_domain))
    random.Random(f"{spec.seed}:load").shuffle(keys)
    for i, k in enumerate(keys):
        yield encode_key(k), _value(i)


def gen_ops(spec: WorkloadSpec) -> Iterator[Op]:
    validate_spec(spec)
    rng = random.Random(f"{spec.seed}:ops")
    sampler = ZipfSampler(spec.key_domain, spec.zipf_s, rng)
    counter = spec.key_domain    # load consumed 0 .. key_domain-1
    top = spec.key_domain - 1
    hs = spec.hotspot

    def draw_key() -> int:
        if spec.distribution == "zipfian":
            return sampler.sample() - 1
        return rng.randrange(spec.key_domain)

    for pi, phase in enumerate(spec.phases):
        for _ in range(phase.ops):
            if phase.kind == WRITE_HEAVY:
                is_read = False
            elif phase.kind == READ_HEAVY:
                is_read = True
            else:
                is_read = rng.random() < phase.read_fraction
            if is_read:
                start = draw_key()
                if hs is not None and phase.kind == READ_HEAVY:
                    while not hs[0] <= start <= hs[1]:
                        start = draw_key()
                if spec.scan_size_range is not None:
                    width = rng.randint(*spec.scan_size_range)
                else:
                    width = spec.scan_size
                yield ScanOp(pi, KeyRange(encode_key(start),
                                          encode_key(min(start + width - 1, top))))
            else:
                yield PutOp(pi, encode_key(draw_key()), _value(counter))
            counter += 1
