"""Scoring predicted outages against ground-truth up/down intervals.

Two modes. Time mode charges every jointly observed second to one of
four cells; event mode matches whole outage events one-to-one with a
timing tolerance, which factors timing imprecision out of short-outage
comparisons.

Cell naming follows the availability convention used in this domain:
ta/fa are seconds (or events) of true/false availability, fo/to of
false/true outage. Mapped onto a standard confusion matrix that is
TP=ta, FP=fa, FN=fo, TN=to.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Mapping, NamedTuple, Sequence

from .blocks import BlockId, parse_block
from .detector import OutageEvent
from .intervals import TimeInterval, merge, overlap_duration

DEFAULT_TAU = 180.0  # seconds of timing slack when matching events
DEFAULT_SHORT_THRESHOLD = 300.0
DEFAULT_LONG_THRESHOLD = 660.0


class TruthState(Enum):
    UP = "up"
    DOWN = "down"

    @classmethod
    def from_label(cls, text: str) -> "TruthState":
        try:
            return {"up": cls.UP, "down": cls.DOWN}[text.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown truth state {text!r}") from None


@dataclass(frozen=True)
class GroundTruthRecord:
    """Externally observed block state over one interval."""

    block: BlockId
    state: TruthState
    interval: TimeInterval


@dataclass
class ConfusionMatrix:
    """ta/fa/fo/to accumulators; seconds in time mode, counts in event mode."""

    ta: float = 0.0
    fa: float = 0.0
    fo: float = 0.0
    to: float = 0.0

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.ta + other.ta, self.fa + other.fa, self.fo + other.fo, self.to + other.to
        )

    @property
    def total(self) -> float:
        return self.ta + self.fa + self.fo + self.to


class Metrics(NamedTuple):
    precision: float | None
    recall: float | None
    tnr: float | None


def metrics(m: ConfusionMatrix) -> Metrics:
    """precision = ta/(ta+fa), recall = ta/(ta+fo), tnr = to/(to+fa).

    A zero denominator yields None for that metric.
    """
    def ratio(num: float, den: float) -> float | None:
        return num / den if den else None

    return Metrics(
        precision=ratio(m.ta, m.ta + m.fa),
        recall=ratio(m.ta, m.ta + m.fo),
        tnr=ratio(m.to, m.to + m.fa),
    )


def _truth_by_block(
    truth: Iterable[GroundTruthRecord],
) -> dict[BlockId, list[GroundTruthRecord]]:
    grouped: dict[BlockId, list[GroundTruthRecord]] = defaultdict(list)
    for rec in truth:
        grouped[rec.block].append(rec)
    for block, recs in grouped.items():
        recs.sort(key=lambda r: r.interval)
        for a, b in zip(recs, recs[1:]):
            if b.interval.start < a.interval.end:
                raise ValueError(f"inconsistent ground truth: {block} intervals overlap")
    return grouped


def time_confusion(
    pred: Mapping[BlockId, Iterable[TimeInterval]],
    truth: Iterable[GroundTruthRecord],
    horizon: TimeInterval,
) -> ConfusionMatrix:
    """Second-weighted confusion over the jointly observed time.

    `pred` maps each block the detector covered to its predicted down
    intervals (possibly none); prediction coverage is the whole horizon.
    Truth coverage is the union of its intervals; gaps are unobserved and
    excluded. Only blocks present in both inputs are scored. Computed by
    exact interval sweep, no sampling.
    """
    grouped = _truth_by_block(truth)
    m = ConfusionMatrix()
    for block, down_ivs in pred.items():
        recs = grouped.get(block)
        if not recs:
            continue
        down = merge(iv for iv in (d.intersection(horizon) for d in down_ivs) if iv)
        for rec in recs:
            cut = rec.interval.intersection(horizon)
            if cut is None:
                continue
            span = cut.duration
            overlap = overlap_duration(cut, down)
            if rec.state is TruthState.DOWN:
                m.to += overlap
                m.fa += span - overlap
            else:
                m.fo += overlap
                m.ta += span - overlap
    return m


def match_events(
    pred: Sequence[TimeInterval],
    truth: Sequence[TimeInterval],
    tau: float,
) -> list[tuple[int, int]]:
    """Greedy earliest-first one-to-one matching of one block's events.

    A pair matches when the intervals overlap, or when both boundary gaps
    are at most tau. Inputs must be time-ordered.
    """
    if tau <= 0:
        raise ValueError(f"matching tolerance must be positive, got {tau}")
    matches: list[tuple[int, int]] = []
    i = j = 0
    while i < len(pred) and j < len(truth):
        p, t = pred[i], truth[j]
        near = abs(p.start - t.start) <= tau and abs(p.end - t.end) <= tau
        if p.overlaps(t) or near:
            matches.append((i, j))
            i += 1
            j += 1
        elif (p.start, p.end) <= (t.start, t.end):
            i += 1
        else:
            j += 1
    return matches


def _occupied_bins(
    intervals: Iterable[TimeInterval], horizon: TimeInterval, tau: float, n_bins: int
) -> set[int]:
    occupied: set[int] = set()
    for iv in intervals:
        cut = iv.intersection(horizon)
        if cut is None:
            continue
        lo = int(math.floor((cut.start - horizon.start) / tau))
        hi = int(math.ceil((cut.end - horizon.start) / tau))
        occupied.update(range(max(lo, 0), min(hi, n_bins)))
    return occupied


def event_confusion(
    pred: Mapping[BlockId, Sequence[TimeInterval]],
    truth: Mapping[BlockId, Sequence[TimeInterval]],
    tau: float,
    horizon: TimeInterval,
    blocks: Iterable[BlockId] | None = None,
) -> ConfusionMatrix:
    """Event-count confusion with timing tolerance tau.

    Matched pairs are true outages (to), unmatched predictions false
    outages (fo), unmatched truth events false availability (fa). ta is
    the count of jointly observed tau-wide block-bins with no event on
    either side; that normalization is a documented convention, not an
    intrinsic quantity, so the bin width rides on tau and the block
    universe is overridable (default: blocks with events on either side).
    """
    if tau <= 0:
        raise ValueError(f"matching tolerance must be positive, got {tau}")
    universe = set(blocks) if blocks is not None else set(pred) | set(truth)
    n_bins = int(math.ceil(horizon.duration / tau))
    m = ConfusionMatrix()
    for block in universe:
        p = sorted(pred.get(block, ()))
        t = sorted(truth.get(block, ()))
        pairs = match_events(p, t, tau)
        m.to += len(pairs)
        m.fo += len(p) - len(pairs)
        m.fa += len(t) - len(pairs)
        quiet = n_bins - len(_occupied_bins(list(p) + list(t), horizon, tau, n_bins))
        m.ta += quiet
    return m


class AddedOutageShare(NamedTuple):
    duration_share: float | None  # short-band outage seconds / long outage seconds
    block_fraction: float         # blocks with at least one short-band event


def added_outage_share(
    events_all: Iterable[OutageEvent],
    events_long_only: Iterable[OutageEvent],
    threshold_short: float = DEFAULT_SHORT_THRESHOLD,
    threshold_long: float = DEFAULT_LONG_THRESHOLD,
    n_blocks: int | None = None,
) -> AddedOutageShare:
    """How much outage time the short band [threshold_short, threshold_long)
    adds on top of a long-events-only view, and the fraction of blocks with
    at least one short-band event."""
    events_all = list(events_all)
    band_total = 0.0
    band_blocks: set[BlockId] = set()
    for ev in events_all:
        d = ev.interval.duration
        if threshold_short <= d < threshold_long:
            band_total += d
            band_blocks.add(ev.block)
    long_total = sum(
        ev.interval.duration
        for ev in events_long_only
        if ev.interval.duration >= threshold_long
    )
    denominator = n_blocks if n_blocks is not None else len({ev.block for ev in events_all})
    return AddedOutageShare(
        duration_share=(band_total / long_total) if long_total > 0 else None,
        block_fraction=(len(band_blocks) / denominator) if denominator else 0.0,
    )


def group_event_intervals(
    events: Iterable[OutageEvent],
) -> dict[BlockId, list[TimeInterval]]:
    grouped: dict[BlockId, list[TimeInterval]] = defaultdict(list)
    for ev in events:
        grouped[ev.block].append(ev.interval)
    for ivs in grouped.values():
        ivs.sort()
    return dict(grouped)


def truth_down_intervals(
    truth: Iterable[GroundTruthRecord],
) -> dict[BlockId, list[TimeInterval]]:
    grouped: dict[BlockId, list[TimeInterval]] = defaultdict(list)
    for rec in truth:
        if rec.state is TruthState.DOWN:
            grouped[rec.block].append(rec.interval)
    for ivs in grouped.values():
        ivs.sort()
    return dict(grouped)


TRUTH_CSV_FIELDS = ["block", "state", "start", "end"]


def write_truth_csv(records: Iterable[GroundTruthRecord], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRUTH_CSV_FIELDS)
    for rec in records:
        w.writerow(
            [str(rec.block), rec.state.value, repr(rec.interval.start), repr(rec.interval.end)]
        )


def read_truth_csv(inp: IO[str]) -> list[GroundTruthRecord]:
    reader = csv.DictReader(inp)
    missing = set(TRUTH_CSV_FIELDS) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"truth CSV missing columns: {sorted(missing)}")
    records = []
    for row in reader:
        records.append(
            GroundTruthRecord(
                block=parse_block(row["block"]),
                state=TruthState.from_label(row["state"]),
                interval=TimeInterval(float(row["start"]), float(row["end"])),
            )
        )
    return records


def report_dict(
    m: ConfusionMatrix,
    mode: str,
    horizon: TimeInterval,
    tau: float | None = None,
    blocks_scored: int | None = None,
) -> dict:
    met = metrics(m)
    report = {
        "mode": mode,
        "horizon": [horizon.start, horizon.end],
        "counts": {"ta": m.ta, "fa": m.fa, "fo": m.fo, "to": m.to},
        "metrics": {"precision": met.precision, "recall": met.recall, "tnr": met.tnr},
    }
    if tau is not None:
        report["tau"] = tau
    if blocks_scored is not None:
        report["blocks_scored"] = blocks_scored
    return report


def format_matrix(m: ConfusionMatrix, unit: str = "s") -> str:
    """Human-readable confusion table with derived metrics."""
    met = metrics(m)

    def num(x: float) -> str:
        return f"{x:.6g}" if x != int(x) else f"{int(x)}"

    def pct(x: float | None) -> str:
        return "n/a" if x is None else f"{x:.5f}"

    lines = [
        f"{'':>12}  {'truth up':>16}  {'truth down':>16}",
        f"{'pred up':>12}  {'ta=' + num(m.ta):>16}  {'fa=' + num(m.fa):>16}",
        f"{'pred down':>12}  {'fo=' + num(m.fo):>16}  {'to=' + num(m.to):>16}",
        f"precision={pct(met.precision)}  recall={pct(met.recall)}  tnr={pct(met.tnr)}  ({unit})",
    ]
    return "\n".join(lines)


def write_report_json(report: dict, out: IO[str]) -> None:
    json.dump(report, out, indent=2)
    out.write("\n")
