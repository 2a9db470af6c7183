"""End-to-end wiring: model the training window, detect over the
detection window, refine and corroborate, optionally falling back to
superblock aggregation for blocks too sparse to judge alone."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .blocks import BlockId, superblock_of
from .detector import (
    DetectorParams,
    InsufficientSignalError,
    OutageEvent,
    aggregate_model,
    corroborate,
    detect_block,
    merge_member_times,
    refine_boundaries,
)
from .intervals import TimeInterval
from .modeler import BlockModel, DEFAULT_LADDER, ParameterLadder, build_models


@dataclass
class DetectionRun:
    """Everything one detection pass produced."""

    models: dict[BlockId, BlockModel]
    events: list[OutageEvent]
    unmeasurable: list[BlockId] = field(default_factory=list)  # left unscored
    aggregated: dict[BlockId, list[BlockId]] = field(default_factory=dict)


def _slice_window(times: np.ndarray, window: TimeInterval) -> np.ndarray:
    lo = np.searchsorted(times, window.start, side="left")
    hi = np.searchsorted(times, window.end, side="left")
    return times[lo:hi]


def _detect_one(task) -> tuple[BlockId, list[OutageEvent]]:
    times, model, params, window, refine = task
    events = detect_block(times, model, params, window)
    if refine:
        events = [refine_boundaries(ev, times, model, window) for ev in events]
    return model.block, events


def run_detection(
    times_by_block: Mapping[BlockId, Sequence[float] | np.ndarray],
    train_window: TimeInterval,
    detect_window: TimeInterval,
    *,
    ladder: ParameterLadder = DEFAULT_LADDER,
    params: DetectorParams | None = None,
    aggregate: bool = False,
    refine: bool = True,
    jobs: int = 1,
) -> DetectionRun:
    """Full pass: build models, detect per measurable block, refine
    boundaries, corroborate; optionally pool unmeasurable siblings."""
    if params is None:
        params = DetectorParams()
    if train_window.end > detect_window.start:
        raise ValueError("training window must precede the detection window")
    arrays = {b: np.asarray(t, dtype=np.float64) for b, t in times_by_block.items()}
    models = build_models(arrays, train_window, ladder)

    tasks = []
    weak: list[BlockId] = []
    for block in sorted(arrays):
        model = models[block]
        if not model.measurable:
            weak.append(block)
            continue
        window_times = _slice_window(arrays[block], detect_window)
        tasks.append((window_times, model, params, detect_window, refine))

    events: list[OutageEvent] = []
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunk = max(1, len(tasks) // (jobs * 4))
            for _block, evs in pool.map(_detect_one, tasks, chunksize=chunk):
                events.extend(evs)
    else:
        for task in tasks:
            events.extend(_detect_one(task)[1])

    run = DetectionRun(models=models, events=events)
    if aggregate:
        groups: dict[BlockId, list[BlockId]] = {}
        for block in weak:
            groups.setdefault(superblock_of(block), []).append(block)
        for key in sorted(groups):
            members = groups[key]
            try:
                agg = aggregate_model([models[b] for b in members], ladder)
            except InsufficientSignalError:
                run.unmeasurable.extend(members)
                continue
            merged = _slice_window(merge_member_times({b: arrays[b] for b in members}), detect_window)
            agg_events = detect_block(merged, agg, params, detect_window)
            if refine:
                agg_events = [
                    refine_boundaries(ev, merged, agg, detect_window) for ev in agg_events
                ]
            events.extend(agg_events)
            run.aggregated[key] = members
    else:
        run.unmeasurable = weak

    run.events = sorted(corroborate(events), key=lambda ev: (ev.block, ev.interval))
    return run
