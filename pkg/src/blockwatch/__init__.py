"""Passive internet outage detection per /24 (IPv4) and /48 (IPv6) block.

Models per-block traffic history, picks a per-block time bin that trades
temporal precision for coverage, tracks a Bayesian up/down belief over
per-bin packet counts, refines event boundaries with exact packet
timestamps, and scores detections against ground truth with both
time-weighted and event-based confusion matrices.
"""

from .blocks import (
    Address,
    AlreadyAggregatedError,
    BlockId,
    Family,
    block_of,
    parse_address,
    parse_block,
    superblock_of,
)
from .detector import (
    BeliefState,
    DetectorParams,
    InsufficientSignalError,
    NotMeasurableError,
    OutageEvent,
    Status,
    aggregate_model,
    belief_update,
    corroborate,
    detect_aggregate,
    detect_block,
    refine_boundaries,
)
from .evaluator import (
    ConfusionMatrix,
    GroundTruthRecord,
    Metrics,
    TruthState,
    added_outage_share,
    event_confusion,
    match_events,
    metrics,
    time_confusion,
)
from .ingest import (
    Observation,
    ObservationParseError,
    TraceMeta,
    UnsortedInputError,
    load_blocks,
    parse_observation_line,
    stream_blocks,
)
from .intervals import TimeInterval
from .modeler import (
    BlockModel,
    DEFAULT_LADDER,
    ParameterLadder,
    build_models,
    coverage_curve,
    estimate_rate,
    select_bin,
)
from .pipeline import DetectionRun, run_detection
from .synth import SynthSpec, gen_trace, load_spec, save_spec, write_trace

__version__ = "0.1.0"

__all__ = [
    "Address",
    "AlreadyAggregatedError",
    "BeliefState",
    "BlockId",
    "BlockModel",
    "ConfusionMatrix",
    "DEFAULT_LADDER",
    "DetectionRun",
    "DetectorParams",
    "Family",
    "GroundTruthRecord",
    "InsufficientSignalError",
    "Metrics",
    "NotMeasurableError",
    "Observation",
    "ObservationParseError",
    "OutageEvent",
    "ParameterLadder",
    "Status",
    "SynthSpec",
    "TimeInterval",
    "TraceMeta",
    "TruthState",
    "UnsortedInputError",
    "added_outage_share",
    "aggregate_model",
    "belief_update",
    "block_of",
    "build_models",
    "corroborate",
    "coverage_curve",
    "detect_aggregate",
    "detect_block",
    "estimate_rate",
    "event_confusion",
    "gen_trace",
    "load_blocks",
    "load_spec",
    "match_events",
    "metrics",
    "parse_address",
    "parse_block",
    "parse_observation_line",
    "refine_boundaries",
    "run_detection",
    "save_spec",
    "select_bin",
    "stream_blocks",
    "superblock_of",
    "time_confusion",
    "write_trace",
]
