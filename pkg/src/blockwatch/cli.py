"""Command-line front door: synth -> model/coverage -> detect -> eval.

Subcommands:
  synth     generate a trace (and ground truth) from a JSON spec
  model     fit per-block models from a trace, dump model CSV
  coverage  measurable-fraction curve across the bin ladder
  detect    run outage detection, write events CSV (and optional JSONL)
  eval      score events against ground truth (time or event mode)

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .blocks import Family
from .detector import (
    DetectorParams,
    write_events_csv,
    write_events_jsonl,
    read_events_csv,
)
from .evaluator import (
    DEFAULT_TAU,
    event_confusion,
    format_matrix,
    group_event_intervals,
    read_truth_csv,
    report_dict,
    time_confusion,
    truth_down_intervals,
    write_report_json,
)
from .ingest import load_blocks
from .intervals import TimeInterval
from .modeler import (
    DEFAULT_C_MIN,
    DEFAULT_BINS,
    ParameterLadder,
    build_models,
    coverage_curve,
    write_coverage_csv,
    write_models_csv,
)
from .pipeline import run_detection
from .synth import load_spec, with_seed, write_trace

DAY = 86400.0


def parse_window(text: str) -> TimeInterval:
    """Epoch-second range "start:end"."""
    try:
        start_s, end_s = text.split(":", 1)
        return TimeInterval(float(start_s), float(end_s))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad window {text!r}: {exc}") from None


def parse_ladder(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ladder {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockwatch",
        description="Passive per-block internet outage detection and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--family", choices=["v4", "v6", "both"], default="both",
            help="restrict processing to one address family (default: both)",
        )
        p.add_argument(
            "--config", metavar="JSON",
            help="JSON file pre-seeding flag defaults; explicit flags win",
        )

    def add_ladder(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--ladder", type=parse_ladder, default=DEFAULT_BINS, metavar="S1,S2,...",
            help=f"candidate bin widths in seconds (default: {','.join(str(int(b)) for b in DEFAULT_BINS)})",
        )
        p.add_argument(
            "--c-min", type=float, default=DEFAULT_C_MIN,
            help=f"required expected packets per bin (default: {DEFAULT_C_MIN})",
        )

    def add_ingest(p: argparse.ArgumentParser) -> None:
        p.add_argument("--sort", action="store_true", help="sort input by time instead of requiring it")
        p.add_argument("--strict", action="store_true", help="abort on malformed lines instead of skipping")

    p = sub.add_parser("synth", help="generate a synthetic trace from a JSON spec")
    p.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p.add_argument("--out", required=True, help="observation TSV to write (.gz ok)")
    p.add_argument("--truth", help="ground-truth CSV to write")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    add_common(p)

    p = sub.add_parser("model", help="fit per-block models and dump them as CSV")
    p.add_argument("--in", dest="input", required=True, help="observation TSV (.gz ok)")
    p.add_argument("--train", type=parse_window, required=True, metavar="A:B", help="training window, epoch seconds")
    p.add_argument("--out", required=True, help="model CSV to write")
    add_ladder(p)
    add_ingest(p)
    add_common(p)

    p = sub.add_parser("coverage", help="measurable-fraction curve over the bin ladder")
    p.add_argument("--in", dest="input", required=True, help="observation TSV (.gz ok)")
    p.add_argument("--train", type=parse_window, required=True, metavar="A:B")
    p.add_argument("--out", required=True, help="coverage CSV to write")
    add_ladder(p)
    add_ingest(p)
    add_common(p)

    p = sub.add_parser("detect", help="detect outages over a detection window")
    p.add_argument("--in", dest="input", required=True, help="observation TSV (.gz ok)")
    p.add_argument("--detect", type=parse_window, required=True, metavar="A:B", help="detection window")
    p.add_argument(
        "--train", type=parse_window, metavar="A:B",
        help="training window (default: the 24 h preceding the detection window)",
    )
    p.add_argument("--out", required=True, help="events CSV to write")
    p.add_argument("--json", dest="json_out", help="also write events as JSON lines")
    p.add_argument("--aggregate", action="store_true", help="pool unmeasurable blocks into superblocks")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for per-block detection")
    dp = DetectorParams()
    p.add_argument("--epsilon", type=float, default=dp.epsilon, help=f"residual down-traffic fraction (default {dp.epsilon})")
    p.add_argument("--b-floor", type=float, default=dp.b_floor, help=f"belief floor (default {dp.b_floor})")
    p.add_argument("--b-ceil", type=float, default=dp.b_ceil, help=f"belief ceiling (default {dp.b_ceil})")
    p.add_argument("--t-down", type=float, default=dp.t_down, help=f"down threshold (default {dp.t_down})")
    p.add_argument("--t-up", type=float, default=dp.t_up, help=f"up threshold (default {dp.t_up})")
    p.add_argument("--prior-up", type=float, default=dp.prior_up, help=f"initial belief (default {dp.prior_up})")
    add_ladder(p)
    add_ingest(p)
    add_common(p)

    p = sub.add_parser("eval", help="score predicted events against ground truth")
    p.add_argument("--mode", choices=["time", "events"], required=True)
    p.add_argument("--pred", required=True, help="events CSV from `detect`")
    p.add_argument("--truth", required=True, help="ground-truth CSV (block,state,start,end)")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help=f"event matching tolerance seconds (default {DEFAULT_TAU})")
    p.add_argument(
        "--horizon", type=parse_window, metavar="A:B",
        help="scoring window (default: the span of the ground truth)",
    )
    p.add_argument("--out", help="write the JSON report here as well")
    add_common(p)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse once to find --config, seed defaults from it, parse again."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    found, _ = probe.parse_known_args(argv)
    if found.config:
        with open(found.config, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
        if not isinstance(overrides, dict):
            raise ValueError(f"{found.config}: config must be a JSON object")
        known = {
            action.dest
            for sp in parser._subparsers._group_actions  # noqa: SLF001 - argparse has no public walk
            for sub in sp.choices.values()
            for action in sub._actions
        }
        bad = set(overrides) - known
        if bad:
            raise ValueError(f"{found.config}: unknown config keys {sorted(bad)}")
        for sp in parser._subparsers._group_actions:
            for sub in sp.choices.values():
                sub.set_defaults(**{k: v for k, v in overrides.items()
                                    if k in {a.dest for a in sub._actions}})
    return parser.parse_args(argv)


def _families(choice: str) -> set[Family]:
    if choice == "both":
        return {Family.V4, Family.V6}
    return {Family.from_label(choice)}


def _filter_family(mapping: dict, families: set[Family]) -> dict:
    return {b: v for b, v in mapping.items() if b.family in families}


def _cmd_synth(args: argparse.Namespace) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = load_spec(fh)
    if args.seed is not None:
        spec = with_seed(spec, args.seed)
    families = _families(args.family)
    if len(families) == 1:
        spec = replace(
            spec,
            blocks=tuple((b, r) for b, r in spec.blocks if b.family in families),
            outages=tuple((b, iv) for b, iv in spec.outages if b.family in families),
        )
    info = write_trace(spec, args.out, args.truth)
    print(f"wrote {info['n_observations']} observations for {info['n_blocks']} blocks to {args.out}")
    return 0


def _load_filtered(args: argparse.Namespace, horizon: TimeInterval):
    blocks, meta = load_blocks(args.input, horizon, sort=args.sort, strict=args.strict)
    blocks = _filter_family(blocks, _families(args.family))
    return blocks, meta


def _cmd_model(args: argparse.Namespace) -> int:
    blocks, _ = _load_filtered(args, args.train)
    models = build_models(blocks, args.train, ParameterLadder(args.ladder, args.c_min))
    with open(args.out, "w", encoding="utf-8") as out:
        write_models_csv(models, out)
    n_meas = sum(m.measurable for m in models.values())
    print(f"{len(models)} blocks modeled, {n_meas} measurable -> {args.out}")
    return 0


def _cmd_coverage(args: argparse.Namespace) -> int:
    blocks, _ = _load_filtered(args, args.train)
    ladder = ParameterLadder(args.ladder, args.c_min)
    models = build_models(blocks, args.train, ladder)
    rows = coverage_curve(models, ladder)
    with open(args.out, "w", encoding="utf-8") as out:
        write_coverage_csv(rows, out)
    print(f"coverage over {len(models)} blocks -> {args.out}")
    return 0


def _cmd_detect(args: argparse.Namespace) -> int:
    detect_window = args.detect
    train_window = args.train or TimeInterval(detect_window.start - DAY, detect_window.start)
    if train_window.end > detect_window.start:
        raise ValueError("training window must precede the detection window")
    span = TimeInterval(min(train_window.start, detect_window.start), detect_window.end)
    blocks, _ = _load_filtered(args, span)
    params = DetectorParams(
        epsilon=args.epsilon,
        b_floor=args.b_floor,
        b_ceil=args.b_ceil,
        t_down=args.t_down,
        t_up=args.t_up,
        prior_up=args.prior_up,
    )
    run = run_detection(
        blocks,
        train_window,
        detect_window,
        ladder=ParameterLadder(args.ladder, args.c_min),
        params=params,
        aggregate=args.aggregate,
        jobs=args.jobs,
    )
    with open(args.out, "w", encoding="utf-8") as out:
        write_events_csv(run.events, out)
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as out:
            write_events_jsonl(run.events, out)
    n_meas = sum(m.measurable for m in run.models.values())
    print(
        f"{len(run.events)} events from {n_meas}/{len(run.models)} measurable blocks"
        + (f", {len(run.aggregated)} aggregates" if run.aggregated else "")
        + f" -> {args.out}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    with open(args.pred, "r", encoding="utf-8") as fh:
        events = read_events_csv(fh)
    with open(args.truth, "r", encoding="utf-8") as fh:
        truth = read_truth_csv(fh)
    families = _families(args.family)
    events = [ev for ev in events if ev.block.family in families]
    truth = [rec for rec in truth if rec.block.family in families]
    if not truth:
        raise ValueError("no ground truth records to score against")
    horizon = args.horizon or TimeInterval(
        min(r.interval.start for r in truth), max(r.interval.end for r in truth)
    )
    if args.mode == "time":
        pred = group_event_intervals(events)
        # always-on detector: truth blocks missing from the events file
        # are scored as predicted-up across the whole horizon
        for rec in truth:
            pred.setdefault(rec.block, [])
        matrix = time_confusion(pred, truth, horizon)
        blocks_scored = len({r.block for r in truth})
        report = report_dict(matrix, "time", horizon, blocks_scored=blocks_scored)
        unit = "s"
    else:
        pred = group_event_intervals(events)
        down = truth_down_intervals(truth)
        matrix = event_confusion(pred, down, args.tau, horizon)
        blocks_scored = len(set(pred) | set(down))
        report = report_dict(matrix, "events", horizon, tau=args.tau, blocks_scored=blocks_scored)
        unit = "events"
    print(format_matrix(matrix, unit))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as out:
            write_report_json(report, out)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "model": _cmd_model,
    "coverage": _cmd_coverage,
    "detect": _cmd_detect,
    "eval": _cmd_eval,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
