"""Per-block traffic models and bin-width selection.

Each block gets a homogeneous-Poisson rate estimate from a training
window and the smallest update period (bin) at which an up block is
expected to show at least `c_min` packets per bin. Blocks with no
qualifying bin on the ladder are unmeasurable on their own and kept for
coverage statistics and spatial aggregation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .blocks import BlockId
from .intervals import TimeInterval

DEFAULT_BINS: tuple[float, ...] = (300.0, 600.0, 1200.0, 3600.0, 7200.0, 14400.0, 86400.0)
DEFAULT_C_MIN = 5.0


@dataclass(frozen=True)
class ParameterLadder:
    """Candidate bin widths (ascending) and the per-bin packet floor."""

    bins: tuple[float, ...] = DEFAULT_BINS
    c_min: float = DEFAULT_C_MIN

    def __post_init__(self) -> None:
        if not self.bins:
            raise ValueError("ladder needs at least one bin width")
        if any(b <= 0 for b in self.bins) or any(
            a >= b for a, b in zip(self.bins, self.bins[1:])
        ):
            raise ValueError(f"ladder bins must be positive and strictly ascending: {self.bins}")
        if not self.c_min > 0:
            raise ValueError(f"c_min must be positive, got {self.c_min}")


DEFAULT_LADDER = ParameterLadder()


@dataclass(frozen=True)
class BlockModel:
    """Learned state for one block: rate, chosen bin, measurability."""

    block: BlockId
    train_window: TimeInterval
    n_train: int
    rate: float               # packets per second over the training window
    bin: float | None         # chosen update period; None when unmeasurable
    measurable: bool
    dense: bool               # measurable at the smallest ladder bin

    @property
    def p_quiet_up(self) -> float | None:
        """Probability of an empty bin while the block is up."""
        if self.bin is None:
            return None
        return math.exp(-self.rate * self.bin)


def estimate_rate(times: Sequence[float] | np.ndarray, train_window: TimeInterval) -> float:
    """Mean arrival rate of the observations falling inside train_window."""
    if not train_window.duration > 0:
        raise ValueError("zero-length training window")
    return count_in_window(times, train_window) / train_window.duration


def count_in_window(times: Sequence[float] | np.ndarray, window: TimeInterval) -> int:
    arr = np.asarray(times, dtype=np.float64)
    lo = np.searchsorted(arr, window.start, side="left")
    hi = np.searchsorted(arr, window.end, side="left")
    return int(hi - lo)


def select_bin(rate: float, ladder: ParameterLadder = DEFAULT_LADDER) -> float | None:
    """Smallest ladder bin with rate*bin >= c_min, or None if none qualifies."""
    if rate < 0:
        raise ValueError(f"negative rate {rate}")
    for width in ladder.bins:
        if rate * width >= ladder.c_min:
            return width
    return None


def build_models(
    times_by_block: Mapping[BlockId, Sequence[float] | np.ndarray],
    train_window: TimeInterval,
    ladder: ParameterLadder = DEFAULT_LADDER,
) -> dict[BlockId, BlockModel]:
    """One BlockModel per observed block; unmeasurable blocks are retained."""
    models: dict[BlockId, BlockModel] = {}
    for block, times in times_by_block.items():
        n = count_in_window(times, train_window)
        rate = n / train_window.duration
        width = select_bin(rate, ladder)
        models[block] = BlockModel(
            block=block,
            train_window=train_window,
            n_train=n,
            rate=rate,
            bin=width,
            measurable=width is not None,
            dense=width == ladder.bins[0],
        )
    return models


def coverage_curve(
    models: Mapping[BlockId, BlockModel],
    ladder: ParameterLadder = DEFAULT_LADDER,
) -> list[tuple[float, float]]:
    """(bin width, fraction of blocks measurable at that width), ascending.

    The fraction is nondecreasing in the width: longer bins trade temporal
    precision for coverage of sparser blocks.
    """
    if not models:
        raise ValueError("no blocks to compute coverage over")
    rates = np.array([m.rate for m in models.values()])
    rows = []
    for width in ladder.bins:
        frac = float(np.count_nonzero(rates * width >= ladder.c_min)) / len(rates)
        rows.append((width, frac))
    return rows


MODEL_CSV_FIELDS = ["block", "family", "lambda", "bin", "measurable", "dense", "n_train"]


def write_models_csv(models: Mapping[BlockId, BlockModel], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(MODEL_CSV_FIELDS)
    for block in sorted(models):
        m = models[block]
        w.writerow(
            [
                str(block),
                block.family.label,
                repr(m.rate),
                "" if m.bin is None else repr(m.bin),
                str(m.measurable).lower(),
                str(m.dense).lower(),
                m.n_train,
            ]
        )


def write_coverage_csv(rows: Iterable[tuple[float, float]], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["bin_seconds", "measurable_fraction"])
    for width, frac in rows:
        w.writerow([repr(width), repr(frac)])
