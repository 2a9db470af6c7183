"""Observation-log parsing and per-block partitioning.

The input is a plain two-column TSV, one observed packet per line:

    <unix_seconds[.frac]> <TAB> <ip_address> [<TAB> anything...]

Extra columns are ignored for forward compatibility. Files ending in
".gz" are decompressed transparently.
"""

from __future__ import annotations

import gzip
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

import numpy as np

from .blocks import Address, BlockId, Family, block_of, parse_address
from .intervals import TimeInterval


class ObservationParseError(ValueError):
    """A malformed log line; carries the 1-based line number when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(f"{where}{message}")


class UnsortedInputError(ValueError):
    """Timestamps went backwards and no sort was requested."""


@dataclass(frozen=True)
class Observation:
    """One passively observed packet."""

    timestamp: float
    source: Address

    def __post_init__(self) -> None:
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError(f"bad observation timestamp {self.timestamp}")


@dataclass
class TraceMeta:
    """Bookkeeping for one partitioning pass over a log."""

    horizon: TimeInterval
    n_v4: int = 0
    n_v6: int = 0
    n_dropped: int = 0    # parsed fine but outside the horizon
    n_malformed: int = 0  # skipped lines (non-strict mode)

    @property
    def n_kept(self) -> int:
        return self.n_v4 + self.n_v6

    @property
    def n_parsed(self) -> int:
        return self.n_kept + self.n_dropped


def parse_observation_line(line: str, lineno: int | None = None) -> Observation:
    """Parse one "<timestamp>\\t<address>" record."""
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) < 2:
        raise ObservationParseError(f"expected 2 tab-separated columns, got {len(fields)}", lineno)
    try:
        ts = float(fields[0])
    except ValueError:
        raise ObservationParseError(f"bad timestamp {fields[0]!r}", lineno) from None
    if not math.isfinite(ts) or ts < 0:
        raise ObservationParseError(f"bad timestamp {fields[0]!r}", lineno)
    try:
        addr = parse_address(fields[1])
    except ValueError as exc:
        raise ObservationParseError(str(exc), lineno) from None
    return Observation(ts, addr)


def iter_lines(path: str) -> Iterator[str]:
    with open_text(path) as fh:
        yield from fh


def open_text(path: str) -> IO[str]:
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def stream_blocks(
    lines: Iterable[str],
    horizon: TimeInterval,
    *,
    sort: bool = False,
    strict: bool = False,
) -> tuple[dict[BlockId, np.ndarray], TraceMeta]:
    """Partition a log into per-block, time-ordered timestamp arrays.

    Input must be time-sorted unless `sort` is set; the first inversion
    otherwise raises UnsortedInputError. Observations outside `horizon`
    are dropped and counted. Malformed lines raise in strict mode and are
    skipped (counted) otherwise.
    """
    meta = TraceMeta(horizon=horizon)
    per_block: dict[BlockId, list[float]] = {}
    prev = -math.inf
    for lineno, raw in enumerate(lines, 1):
        try:
            obs = parse_observation_line(raw, lineno)
        except ObservationParseError:
            if strict:
                raise
            meta.n_malformed += 1
            continue
        ts = obs.timestamp
        if not sort:
            if ts < prev:
                raise UnsortedInputError(
                    f"line {lineno}: timestamp {ts} precedes {prev}; "
                    "input must be sorted (or pass sort=True)"
                )
            prev = ts
        if not horizon.contains(ts):
            meta.n_dropped += 1
            continue
        if obs.source.family is Family.V4:
            meta.n_v4 += 1
        else:
            meta.n_v6 += 1
        per_block.setdefault(block_of(obs.source), []).append(ts)

    out: dict[BlockId, np.ndarray] = {}
    for block, ts_list in per_block.items():
        arr = np.asarray(ts_list, dtype=np.float64)
        if sort:
            arr.sort(kind="stable")
        out[block] = arr
    return out, meta


def load_blocks(
    path: str,
    horizon: TimeInterval,
    *,
    sort: bool = False,
    strict: bool = False,
) -> tuple[dict[BlockId, np.ndarray], TraceMeta]:
    """stream_blocks over a file path (gzip-aware)."""
    return stream_blocks(iter_lines(path), horizon, sort=sort, strict=strict)
