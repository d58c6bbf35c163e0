"""Command-line interface.

Subcommands: ``localize`` (attribute a shift from a graph and two window
CSVs), ``simulate`` (write a reference-pipeline dataset plus manifest),
``experiment`` (repeated fault localisations with summary and optional
chart) and ``report`` (re-render a stored JSON report).

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .attribution import AttributionConfig, attribute_change
from .dataset import DatasetError, WindowLabel, load_window, to_csv_text
from .graph import GraphParseError, GraphValidationError, UnknownStreamError, load_graph
from .mechanisms import MechanismError
from .report import (
    atomic_write_text,
    load_stored,
    render_markdown,
    save_figure,
    to_json_text,
)
from .simulator import (
    SimulationError,
    dataset_manifest,
    get_pipeline,
    parse_fault,
    pipeline_names,
    run_experiment,
    simulate,
)
from .stats import KLSupportError

USAGE_EXIT = 1
RUNTIME_EXIT = 2

# what the caller got wrong (inputs, flags) vs. what failed while running
_VALIDATION_ERRORS = (
    GraphParseError,
    GraphValidationError,
    DatasetError,
    SimulationError,
    UnknownStreamError,
)
_RUNTIME_ERRORS = (MechanismError, KLSupportError, OSError)


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits with code 1 on usage errors."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _build_parser() -> _Parser:
    parser = _Parser(prog="flowcause", description="Localise the cause of an output-distribution shift in a dataflow pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    loc = sub.add_parser("localize", help="attribute an output shift to a stream")
    loc.add_argument("--graph", required=True, help="graph document (JSON)")
    loc.add_argument("--old", required=True, help="pre-change window (CSV/JSONL)")
    loc.add_argument("--new", required=True, help="post-change window (CSV/JSONL)")
    loc.add_argument("--target", required=True, help="target stream id")
    loc.add_argument("--seed", type=int, default=0)
    loc.add_argument("--shapley", default="auto", metavar="exact|perm:M")
    loc.add_argument("--alpha", type=float, default=0.05)
    loc.add_argument("--players", choices=["all", "changed"], default="all")
    loc.add_argument("--out", default=None, help="output path (stdout when omitted)")
    loc.add_argument("--format", choices=["json", "md"], default="json")

    sim = sub.add_parser("simulate", help="write a simulated dataset window")
    sim.add_argument("--pipeline", required=True, choices=list(pipeline_names()))
    sim.add_argument("--fault", default=None, metavar="KIND:LOCATION[:PARAM]")
    sim.add_argument("--n", required=True, type=int, help="number of units")
    sim.add_argument("--seed", required=True, type=int)
    sim.add_argument("--out", required=True, help="dataset CSV path")

    exp = sub.add_parser("experiment", help="repeated fault localisation")
    exp.add_argument("--pipeline", required=True, choices=list(pipeline_names()))
    exp.add_argument("--fault", default=None, metavar="KIND:LOCATION[:PARAM]")
    exp.add_argument("--repeats", type=int, default=20)
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--out", required=True, help="summary JSON path")
    exp.add_argument("--svg", default=None, help="optional score chart path")

    rep = sub.add_parser("report", help="re-render a stored JSON report")
    rep.add_argument("--in", dest="in_path", required=True, help="stored JSON report")
    rep.add_argument("--format", choices=["md", "svg"], required=True)
    return parser


def _shapley_mode(text: str) -> str:
    if text in ("auto", "exact"):
        return text
    if text.startswith("perm:"):
        try:
            count = int(text.split(":", 1)[1])
        except ValueError:
            count = 0
        if count >= 1:
            return text
    raise SimulationError(f"--shapley must be 'exact' or 'perm:M', got {text!r}")


def _cmd_localize(args: argparse.Namespace) -> int:
    config = AttributionConfig(
        master_seed=args.seed,
        shapley_mode=_shapley_mode(args.shapley),
        alpha=args.alpha,
        player_policy=args.players,
    )
    graph = load_graph(args.graph)
    old = load_window(args.old, graph, WindowLabel.OLD)
    new = load_window(args.new, graph, WindowLabel.NEW)
    report = attribute_change(graph, old, new, args.target, config)
    text = to_json_text(report) if args.format == "json" else render_markdown(report)
    if args.out is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(args.out, text)
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    spec = get_pipeline(args.pipeline)
    fault = parse_fault(args.fault) if args.fault else None
    ds = simulate(spec, fault, args.n, args.seed)
    atomic_write_text(args.out, to_csv_text(ds))
    manifest = dataset_manifest(spec, fault, args.n, args.seed)
    manifest_path = Path(args.out).with_suffix(Path(args.out).suffix + ".manifest.json")
    atomic_write_text(manifest_path, json.dumps(manifest, indent=2) + "\n")
    return 0


def _cmd_experiment(args: argparse.Namespace) -> int:
    spec = get_pipeline(args.pipeline)
    fault = parse_fault(args.fault) if args.fault else None
    config = AttributionConfig(master_seed=args.seed)
    summary = run_experiment(spec, fault, args.repeats, config)
    atomic_write_text(args.out, to_json_text(summary))
    scores_path = Path(args.out).with_suffix(".scores.csv")
    lines = ["stream," + ",".join(f"repeat{r}" for r in range(summary.repeats))]
    for stream, scores in summary.scores_by_repeat.items():
        lines.append(stream + "," + ",".join(repr(v) for v in scores))
    atomic_write_text(scores_path, "\n".join(lines) + "\n")
    if args.svg:
        save_figure(summary, args.svg)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    stored = load_stored(args.in_path)
    if args.format == "md":
        sys.stdout.write(render_markdown(stored))
        return 0
    out_path = Path(args.in_path).with_suffix(".svg")
    save_figure(stored, out_path)
    print(str(out_path))
    return 0


_COMMANDS = {
    "localize": _cmd_localize,
    "simulate": _cmd_simulate,
    "experiment": _cmd_experiment,
    "report": _cmd_report,
}


def run_cli(argv: list[str]) -> int:
    """Parse arguments and execute; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _RUNTIME_ERRORS as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return RUNTIME_EXIT
    except _VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_EXIT
    except ValueError as err:
        # config bounds and similar caller mistakes
        print(f"error: {err}", file=sys.stderr)
        return USAGE_EXIT
    except KeyError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return RUNTIME_EXIT


def main() -> None:
    raise SystemExit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
