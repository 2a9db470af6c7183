"""Bayesian per-block outage detection.

Per block, the detection horizon is cut into bins of the block's chosen
width. Each bin's packet count updates a posterior belief that the block
is up, testing a Poisson(rate*bin) up model against a residual
Poisson(epsilon*rate*bin) down model. Belief crossings with hysteresis
delimit outage events; event boundaries are then refined using the exact
timestamps of the packets bracketing the quiet period, and events are
corroborated against sibling blocks in the same aggregate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .blocks import BlockId, Family, parse_block, superblock_of
from .intervals import TimeInterval
from .modeler import BlockModel, ParameterLadder, select_bin

LOG_100 = math.log(100.0)  # guard scale: 99th-percentile quiet gap is ln(100)/rate


class Status(Enum):
    UP = "up"
    DOWN = "down"
    UNKNOWN = "unknown"


class NotMeasurableError(ValueError):
    """Detection was requested for a block with no usable bin width."""


class InsufficientSignalError(ValueError):
    """Even the aggregated member blocks cannot support any ladder bin."""


@dataclass(frozen=True)
class DetectorParams:
    """Detection constants. Everything tunable lives here, nothing is hard-coded."""

    epsilon: float = 0.01   # residual fraction of traffic surviving an outage
    b_floor: float = 0.01   # belief clamps prevent saturation lock-in
    b_ceil: float = 0.99
    t_down: float = 0.1     # hysteresis: UP -> DOWN below t_down,
    t_up: float = 0.9       #             DOWN -> UP above t_up
    prior_up: float = 0.9   # edge blocks are up most of the time

    def __post_init__(self) -> None:
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"epsilon must be in [0, 1), got {self.epsilon}")
        if not (0 < self.b_floor < self.t_down < self.t_up < self.b_ceil < 1):
            raise ValueError(
                "need 0 < b_floor < t_down < t_up < b_ceil < 1, got "
                f"{self.b_floor}, {self.t_down}, {self.t_up}, {self.b_ceil}"
            )
        if not self.b_floor <= self.prior_up <= self.b_ceil:
            raise ValueError(f"prior_up {self.prior_up} outside clamp range")


@dataclass
class BeliefState:
    """Mutable tracker state while scanning one block's bins."""

    belief: float
    status: Status = Status.UNKNOWN
    last_packet: float | None = None


@dataclass(frozen=True)
class OutageEvent:
    """A detected down interval for one block (or aggregate key)."""

    block: BlockId
    interval: TimeInterval
    confidence: float        # 1 - belief at the moment of detection
    corroboration: int = 0   # sibling blocks with an overlapping outage
    open_ended: bool = False  # the trace ended while still down

    @property
    def granularity(self) -> str:
        return self.block.granularity


def belief_update(
    belief: float,
    count: int,
    rate: float,
    delta: float,
    epsilon: float,
    floor: float = 0.01,
    ceil: float = 0.99,
) -> float:
    """One Bayes step on the per-bin packet count, clamped to [floor, ceil].

    Likelihoods are Poisson(count; rate*delta) up versus
    Poisson(count; epsilon*rate*delta) down, evaluated in log space so
    deep silence cannot underflow. A zero rate carries no information
    (both likelihoods degenerate) and returns the belief unchanged.
    """
    if count < 0:
        raise ValueError(f"negative bin count {count}")
    if delta <= 0:
        raise ValueError(f"bin width must be positive, got {delta}")
    if rate == 0.0:
        return belief
    lam_up = rate * delta
    lam_down = epsilon * rate * delta
    log_up = count * math.log(lam_up) - lam_up - math.lgamma(count + 1)
    if epsilon == 0.0:
        if count > 0:
            return ceil  # any packet is impossible under the down model
        log_down = 0.0
    else:
        log_down = count * math.log(lam_down) - lam_down - math.lgamma(count + 1)
    log_odds = math.log(belief) - math.log1p(-belief) + (log_up - log_down)
    if log_odds >= 0:
        posterior = 1.0 / (1.0 + math.exp(-log_odds))
    else:
        e = math.exp(log_odds)
        posterior = e / (1.0 + e)
    return min(max(posterior, floor), ceil)


def _bin_edges(horizon: TimeInterval, width: float) -> np.ndarray:
    """Bin grid anchored at horizon.start; a shorter trailing bin keeps tail evidence."""
    n_full = int(math.floor(horizon.duration / width))
    edges = horizon.start + width * np.arange(n_full + 1, dtype=np.float64)
    if horizon.end - edges[-1] > 1e-9 * width:
        edges = np.append(edges, horizon.end)
    else:
        edges[-1] = horizon.end  # absorb float rounding on exact multiples
    return edges


def detect_block(
    times: Sequence[float] | np.ndarray,
    model: BlockModel,
    params: DetectorParams,
    horizon: TimeInterval,
) -> list[OutageEvent]:
    """Scan one block's bins and return its raw, bin-granular outage events.

    Events are maximal runs of DOWN status: disjoint, time-ordered, and
    ending at horizon.end (open-ended) when the trace runs out while down.
    """
    if not model.measurable or model.bin is None:
        raise NotMeasurableError(f"{model.block}: not measurable; aggregate or widen the bin")
    arr = np.asarray(times, dtype=np.float64)
    arr = arr[(arr >= horizon.start) & (arr < horizon.end)]
    edges = _bin_edges(horizon, model.bin)
    counts = np.diff(np.searchsorted(arr, edges, side="left"))

    state = BeliefState(belief=params.prior_up)
    events: list[OutageEvent] = []
    run_start: float | None = None
    run_end = 0.0
    run_conf = 0.0
    for i, k in enumerate(counts):
        lo, hi = float(edges[i]), float(edges[i + 1])
        state.belief = belief_update(
            state.belief, int(k), model.rate, hi - lo, params.epsilon,
            params.b_floor, params.b_ceil,
        )
        if k:
            state.last_packet = float(arr[np.searchsorted(arr, hi, side="left") - 1])
        prev = state.status
        if prev is Status.UNKNOWN:
            state.status = Status.DOWN if state.belief < params.t_down else Status.UP
        elif prev is Status.UP and state.belief < params.t_down:
            state.status = Status.DOWN
        elif prev is Status.DOWN and state.belief > params.t_up:
            state.status = Status.UP
        if state.status is Status.DOWN:
            if run_start is None:
                run_start = lo
                run_conf = 1.0 - state.belief
            run_end = hi
        elif run_start is not None:
            events.append(
                OutageEvent(model.block, TimeInterval(run_start, run_end), run_conf)
            )
            run_start = None
    if run_start is not None:
        events.append(
            OutageEvent(model.block, TimeInterval(run_start, run_end), run_conf, open_ended=True)
        )
    return events


def refine_boundaries(
    event: OutageEvent,
    times: Sequence[float] | np.ndarray,
    model: BlockModel,
    horizon: TimeInterval,
) -> OutageEvent:
    """Tighten a bin-granular event using exact packet timestamps.

    The start moves to the last pre-event packet plus a guard of
    min(ln(100)/rate, bin) -- the point where continued silence first
    becomes 99%-implausible under the up model -- never later than the
    bin-granular start. The end snaps to the first packet at or after the
    event, or to horizon.end (open-ended) when there is none.
    """
    if model.bin is None:
        raise NotMeasurableError(f"{model.block}: cannot refine without a bin width")
    arr = np.asarray(times, dtype=np.float64)
    arr = arr[(arr >= horizon.start) & (arr < horizon.end)]
    i = int(np.searchsorted(arr, event.interval.start, side="left"))
    t_last = float(arr[i - 1]) if i > 0 else horizon.start
    j = int(np.searchsorted(arr, event.interval.end, side="left"))
    t_first = float(arr[j]) if j < len(arr) else None

    guard = min(LOG_100 / model.rate, model.bin) if model.rate > 0 else model.bin
    new_start = min(t_last + guard, event.interval.start)
    if t_first is None:
        new_end, open_ended = horizon.end, True
    else:
        new_end, open_ended = t_first, False
    if not (t_last <= new_start and new_end <= (t_first if t_first is not None else horizon.end)):
        raise AssertionError("refinement widened the event beyond its bracketing packets")
    return replace(event, interval=TimeInterval(new_start, new_end), open_ended=open_ended)


def corroborate(events: Iterable[OutageEvent]) -> list[OutageEvent]:
    """Count, per event, the sibling blocks (same superblock) with an
    overlapping outage. Aggregate-granularity events pass through as-is."""
    events = list(events)
    by_super: dict[BlockId, dict[BlockId, list[TimeInterval]]] = {}
    for ev in events:
        if ev.block.is_aggregate:
            continue
        group = by_super.setdefault(superblock_of(ev.block), {})
        group.setdefault(ev.block, []).append(ev.interval)

    out: list[OutageEvent] = []
    for ev in events:
        if ev.block.is_aggregate:
            out.append(ev)
            continue
        group = by_super[superblock_of(ev.block)]
        n = sum(
            1
            for sibling, ivs in group.items()
            if sibling != ev.block and any(ev.interval.overlaps(iv) for iv in ivs)
        )
        out.append(replace(ev, corroboration=n))
    return out


def aggregate_model(
    members: Sequence[BlockModel],
    ladder: ParameterLadder,
) -> BlockModel:
    """Synthetic model for a superblock built from unmeasurable members.

    The aggregate rate is the sum of member rates; the bin is selected
    from the ladder as for any block. Raises InsufficientSignalError when
    even the pooled rate supports no ladder bin.
    """
    if not members:
        raise ValueError("no member blocks to aggregate")
    superkeys = {superblock_of(m.block) for m in members}
    if len(superkeys) != 1:
        raise ValueError(f"members span multiple aggregates: {sorted(map(str, superkeys))}")
    for m in members:
        if m.measurable:
            raise ValueError(f"{m.block} is measurable on its own; aggregate only weak blocks")
    key = superkeys.pop()
    rate = sum(m.rate for m in members)
    width = select_bin(rate, ladder)
    if width is None:
        raise InsufficientSignalError(f"{key}: insufficient signal at any scale")
    return BlockModel(
        block=key,
        train_window=members[0].train_window,
        n_train=sum(m.n_train for m in members),
        rate=rate,
        bin=width,
        measurable=True,
        dense=width == ladder.bins[0],
    )


def merge_member_times(
    times_by_block: Mapping[BlockId, Sequence[float] | np.ndarray],
) -> np.ndarray:
    arrays = [np.asarray(t, dtype=np.float64) for t in times_by_block.values()]
    if not arrays:
        return np.empty(0, dtype=np.float64)
    merged = np.concatenate(arrays)
    merged.sort(kind="stable")
    return merged


def detect_aggregate(
    times_by_block: Mapping[BlockId, Sequence[float] | np.ndarray],
    models: Mapping[BlockId, BlockModel],
    ladder: ParameterLadder,
    params: DetectorParams,
    horizon: TimeInterval,
) -> list[OutageEvent]:
    """Pool one superblock's unmeasurable members and detect at the aggregate key."""
    members = [models[b] for b in times_by_block]
    agg = aggregate_model(members, ladder)
    merged = merge_member_times(times_by_block)
    return detect_block(merged, agg, params, horizon)


EVENT_CSV_FIELDS = [
    "block", "family", "start", "end",
    "confidence", "corroboration", "open_ended", "granularity",
]


def _event_row(ev: OutageEvent) -> dict[str, object]:
    return {
        "block": str(ev.block),
        "family": ev.block.family.label,
        "start": ev.interval.start,
        "end": ev.interval.end,
        "confidence": ev.confidence,
        "corroboration": ev.corroboration,
        "open_ended": ev.open_ended,
        "granularity": ev.granularity,
    }


def write_events_csv(events: Iterable[OutageEvent], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(EVENT_CSV_FIELDS)
    for ev in events:
        row = _event_row(ev)
        w.writerow(
            [
                row["block"], row["family"], repr(row["start"]), repr(row["end"]),
                repr(row["confidence"]), row["corroboration"],
                str(row["open_ended"]).lower(), row["granularity"],
            ]
        )


def write_events_jsonl(events: Iterable[OutageEvent], out: IO[str]) -> None:
    for ev in events:
        out.write(json.dumps(_event_row(ev)) + "\n")


def read_events_csv(inp: IO[str]) -> list[OutageEvent]:
    reader = csv.DictReader(inp)
    missing = set(EVENT_CSV_FIELDS) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"events CSV missing columns: {sorted(missing)}")
    events = []
    for row in reader:
        events.append(
            OutageEvent(
                block=parse_block(row["block"]),
                interval=TimeInterval(float(row["start"]), float(row["end"])),
                confidence=float(row["confidence"]),
                corroboration=int(row["corroboration"]),
                open_ended=row["open_ended"].strip().lower() == "true",
            )
        )
    return events
