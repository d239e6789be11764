"""Newest-version-wins merging of ascending entry runs."""

from __future__ import annotations

from typing import List, Sequence

from .core import Entry


def merge_entries(sources: Sequence[Sequence[Entry]]) -> List[Entry]:
    """Merge ascending runs into one ascending run, keeping the largest seq
    per key.

    Each source must be ascending and hold at most one version per key;
    versions of a key may appear in any number of sources.  Sorting the
    concatenation by (key, -seq) and keeping the first record per key runs
    in C and beats a hand-rolled heap for the run counts seen here.
    """
    nonempty = [s for s in sources if s]
    if not nonempty:
        return []
    if len(nonempty) == 1:
        return list(nonempty[0])
    pool: List[Entry] = []
    for s in nonempty:
        pool.extend(s)
    pool.sort(key=_key_desc_seq)
    out: List[Entry] = []
    last = None
    for e in pool:
        if e.key != last:
            out.append(e)
            last = e.key
    return out


def _key_desc_seq(e: Entry):
    return (e.key, -e.seq)
