"""Deterministic synthetic traces with injected outages.

Arrivals are homogeneous Poisson per block at the block's rate, dropping
to epsilon * rate inside injected outage intervals. Generation is
reproducible byte-for-byte across runs and platforms:

* every (block, segment, purpose) gets its own counter-based Philox
  stream, keyed by SHA-256 over the spec seed and the block/segment
  identity, so per-block generation can run in any order or in parallel;
* uniforms come from the raw 64-bit stream (top 53 bits) and exponential
  gaps from the inverse CDF, avoiding any library sampling whose
  algorithm might change.

Source addresses are drawn uniformly inside the block from a separate
stream, so traces regenerated without addresses keep identical times.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import math
from dataclasses import dataclass, replace
from typing import IO

import ipaddress
import numpy as np
from numpy.random import Philox

from .blocks import BlockId, Family, parse_block
from .evaluator import GroundTruthRecord, TruthState
from .intervals import TimeInterval, complement

_PURPOSE_TIMES = 0
_PURPOSE_HOSTS = 1


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one trace: blocks with rates, horizon, injected outages."""

    blocks: tuple[tuple[BlockId, float], ...]
    horizon: TimeInterval
    outages: tuple[tuple[BlockId, TimeInterval], ...] = ()
    epsilon: float = 0.0   # residual traffic fraction during an outage
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"epsilon must be in [0, 1), got {self.epsilon}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        seen: set[BlockId] = set()
        for block, rate in self.blocks:
            if rate < 0:
                raise ValueError(f"negative rate for {block}")
            if block in seen:
                raise ValueError(f"duplicate block {block}")
            seen.add(block)
        per_block: dict[BlockId, list[TimeInterval]] = {}
        for block, iv in self.outages:
            if block not in seen:
                raise ValueError(f"outage for undeclared block {block}")
            if iv.start < self.horizon.start or iv.end > self.horizon.end:
                raise ValueError(f"outage {iv} outside horizon for {block}")
            per_block.setdefault(block, []).append(iv)
        for block, ivs in per_block.items():
            ivs.sort()
            for a, b in zip(ivs, ivs[1:]):
                if b.start < a.end:
                    raise ValueError(f"overlapping outages injected for {block}")

    def outages_of(self, block: BlockId) -> list[TimeInterval]:
        return sorted(iv for b, iv in self.outages if b == block)


def _substream(spec: SynthSpec, purpose: int, block: BlockId, segment: int) -> Philox:
    material = (
        spec.seed.to_bytes(8, "big")
        + bytes([purpose, block.family.value])
        + block.prefix
        + segment.to_bytes(4, "big")
    )
    digest = hashlib.sha256(material).digest()[:16]
    key = np.frombuffer(digest, dtype=np.uint64)
    return Philox(key=key)


def _uniforms(gen: Philox, n: int) -> np.ndarray:
    raw = gen.random_raw(n)
    return (raw >> np.uint64(11)) * 2.0**-53


def _exp_arrivals(gen: Philox, rate: float, segment: TimeInterval) -> np.ndarray:
    """Poisson arrivals in [segment.start, segment.end) via inverse-CDF gaps."""
    empty = np.empty(0, dtype=np.float64)
    if rate <= 0:
        return empty
    parts: list[np.ndarray] = []
    t = segment.start
    while True:
        remaining = segment.end - t
        n = max(64, int(rate * remaining + 10.0 * math.sqrt(rate * remaining + 1.0) + 16))
        gaps = -np.log1p(-_uniforms(gen, n)) / rate
        ts = t + np.cumsum(gaps)
        idx = int(np.searchsorted(ts, segment.end, side="left"))
        if idx < len(ts):
            parts.append(ts[:idx])
            break
        parts.append(ts)
        t = float(ts[-1])
    return np.concatenate(parts) if parts else empty


def _segments(spec: SynthSpec, block: BlockId, rate: float) -> list[tuple[TimeInterval, float]]:
    """Horizon cut at the block's outages: (interval, effective rate) in time order."""
    segments: list[tuple[TimeInterval, float]] = []
    cursor = spec.horizon.start
    for down in spec.outages_of(block):
        if cursor < down.start:
            segments.append((TimeInterval(cursor, down.start), rate))
        segments.append((down, spec.epsilon * rate))
        cursor = down.end
    if cursor < spec.horizon.end:
        segments.append((TimeInterval(cursor, spec.horizon.end), rate))
    return segments


def gen_block_times(spec: SynthSpec, block: BlockId, rate: float) -> np.ndarray:
    parts = [
        _exp_arrivals(_substream(spec, _PURPOSE_TIMES, block, i), seg_rate, seg)
        for i, (seg, seg_rate) in enumerate(_segments(spec, block, rate))
    ]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.float64)


def truth_records(spec: SynthSpec) -> list[GroundTruthRecord]:
    """Ground truth implied by the spec: DOWN inside injected outages, UP elsewhere."""
    records: list[GroundTruthRecord] = []
    for block, _rate in spec.blocks:
        downs = spec.outages_of(block)
        labelled = [(iv, TruthState.DOWN) for iv in downs]
        labelled += [(iv, TruthState.UP) for iv in complement(downs, spec.horizon)]
        labelled.sort(key=lambda pair: pair[0])
        records.extend(GroundTruthRecord(block, state, iv) for iv, state in labelled)
    return records


def gen_trace(spec: SynthSpec) -> tuple[dict[BlockId, np.ndarray], list[GroundTruthRecord]]:
    """All blocks' arrival times plus the injected ground truth."""
    times = {block: gen_block_times(spec, block, rate) for block, rate in spec.blocks}
    return times, truth_records(spec)


def _host_addresses(spec: SynthSpec, block: BlockId, counts: list[int]) -> list[str]:
    """Per-segment uniformly drawn addresses inside the block, as text."""
    out: list[str] = []
    for seg_idx, n in enumerate(counts):
        if n == 0:
            continue
        gen = _substream(spec, _PURPOSE_HOSTS, block, seg_idx)
        if block.family is Family.V4:
            raw = gen.random_raw(n)
            for r in raw:
                packed = block.prefix + (int(r) & 0xFF).to_bytes(1, "big")
                out.append(str(ipaddress.IPv4Address(packed)))
        else:
            raw = gen.random_raw(2 * n)
            for hi, lo in zip(raw[0::2], raw[1::2]):
                host = (int(hi) & 0xFFFF).to_bytes(2, "big") + int(lo).to_bytes(8, "big")
                out.append(str(ipaddress.IPv6Address(block.prefix + host)))
    return out


def write_trace(spec: SynthSpec, trace_path: str, truth_path: str | None = None) -> dict:
    """Generate and write the observation TSV (time-sorted) and truth CSV.

    Same spec, same bytes: ordering ties break by the spec's block order.
    """
    all_times: list[np.ndarray] = []
    all_addrs: list[str] = []
    for block, rate in spec.blocks:
        seg_times = [
            _exp_arrivals(_substream(spec, _PURPOSE_TIMES, block, i), seg_rate, seg)
            for i, (seg, seg_rate) in enumerate(_segments(spec, block, rate))
        ]
        counts = [len(t) for t in seg_times]
        if seg_times:
            all_times.append(np.concatenate(seg_times))
        all_addrs.extend(_host_addresses(spec, block, counts))
    merged = np.concatenate(all_times) if all_times else np.empty(0, dtype=np.float64)
    order = np.argsort(merged, kind="stable")

    opener = gzip.open if str(trace_path).endswith(".gz") else open
    with opener(trace_path, "wt", encoding="utf-8") as out:
        for idx in order:
            out.write(f"{merged[idx]:.6f}\t{all_addrs[idx]}\n")
    if truth_path is not None:
        from .evaluator import write_truth_csv

        with open(truth_path, "w", encoding="utf-8") as out:
            write_truth_csv(truth_records(spec), out)
    return {"n_observations": int(len(merged)), "n_blocks": len(spec.blocks)}


def with_seed(spec: SynthSpec, seed: int) -> SynthSpec:
    return replace(spec, seed=seed)


def save_spec(spec: SynthSpec, out: IO[str]) -> None:
    doc = {
        "seed": spec.seed,
        "epsilon": spec.epsilon,
        "horizon": {"start": spec.horizon.start, "end": spec.horizon.end},
        "blocks": [{"block": str(b), "rate": r} for b, r in spec.blocks],
        "outages": [
            {"block": str(b), "start": iv.start, "end": iv.end} for b, iv in spec.outages
        ],
    }
    json.dump(doc, out, indent=2)
    out.write("\n")


def load_spec(inp: IO[str]) -> SynthSpec:
    doc = json.load(inp)
    try:
        horizon = TimeInterval(float(doc["horizon"]["start"]), float(doc["horizon"]["end"]))
        blocks = tuple(
            (parse_block(entry["block"]), float(entry["rate"])) for entry in doc["blocks"]
        )
        outages = tuple(
            (
                parse_block(entry["block"]),
                TimeInterval(float(entry["start"]), float(entry["end"])),
            )
            for entry in doc.get("outages", [])
        )
        return SynthSpec(
            blocks=blocks,
            horizon=horizon,
            outages=outages,
            epsilon=float(doc.get("epsilon", 0.0)),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad synth spec: {exc}") from None


def filter_family(spec: SynthSpec, family: Family) -> SynthSpec:
    """Restrict a spec to one family; kept blocks keep their exact streams."""
    return replace(
        spec,
        blocks=tuple((b, r) for b, r in spec.blocks if b.family is family),
        outages=tuple((b, iv) for b, iv in spec.outages if b.family is family),
    )
