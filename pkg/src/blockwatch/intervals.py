"""Half-open time intervals and the small set algebra the scorers need.

Everything here is [start, end): a boundary instant belongs to the
interval that starts there and never to the one that ends there, so a
partition of a window adds up to its full length with no double counting.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True, order=True)
class TimeInterval:
    """Half-open interval [start, end) in seconds since the epoch."""

    start: float
    end: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError(f"non-finite interval bounds ({self.start}, {self.end})")
        if not self.start < self.end:
            raise ValueError(f"empty interval: start {self.start} must precede end {self.end}")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def contains(self, t: float) -> bool:
        return self.start <= t < self.end

    def overlaps(self, other: "TimeInterval") -> bool:
        # touching at a single point is an empty intersection
        return self.start < other.end and other.start < self.end

    def intersection(self, other: "TimeInterval") -> "TimeInterval | None":
        lo = max(self.start, other.start)
        hi = min(self.end, other.end)
        return TimeInterval(lo, hi) if lo < hi else None

    def shift(self, offset: float) -> "TimeInterval":
        return TimeInterval(self.start + offset, self.end + offset)


def merge(intervals: Iterable[TimeInterval]) -> list[TimeInterval]:
    """Coalesce overlapping or touching intervals into a disjoint sorted list."""
    out: list[TimeInterval] = []
    for iv in sorted(intervals):
        if out and iv.start <= out[-1].end:
            if iv.end > out[-1].end:
                out[-1] = TimeInterval(out[-1].start, iv.end)
        else:
            out.append(iv)
    return out


def total_duration(intervals: Iterable[TimeInterval]) -> float:
    """Total measure of a set of disjoint intervals."""
    return sum(iv.duration for iv in intervals)


def overlap_duration(iv: TimeInterval, merged: list[TimeInterval]) -> float:
    """Measure of iv's intersection with an already-merged interval list."""
    starts = [m.start for m in merged]
    ends = [m.end for m in merged]
    # candidates: merged intervals that can reach into iv
    lo = bisect_right(ends, iv.start)
    hi = bisect_left(starts, iv.end)
    total = 0.0
    for m in merged[lo:hi]:
        cut = iv.intersection(m)
        if cut is not None:
            total += cut.duration
    return total


def complement(intervals: Iterable[TimeInterval], within: TimeInterval) -> list[TimeInterval]:
    """Gaps of `within` not covered by `intervals` (clipped to `within`)."""
    cursor = within.start
    out: list[TimeInterval] = []
    for iv in merge(intervals):
        cut = iv.intersection(within)
        if cut is None:
            continue
        if cursor < cut.start:
            out.append(TimeInterval(cursor, cut.start))
        cursor = max(cursor, cut.end)
    if cursor < within.end:
        out.append(TimeInterval(cursor, within.end))
    return out
