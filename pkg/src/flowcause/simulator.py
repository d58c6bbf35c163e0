"""Deterministic in-process pipeline simulator and experiment harness.

Three reference pipelines produce windowed datasets for the attribution
engine:

``insurance``
    Claims processing. A claim amount enters, gets a value adjustment,
    routes by value (threshold 10000) into low/high branches; low-value
    claims are classified simple or complex; simple claims pay out at
    factor 0.9, complex and high-value claims at 0.7; both payout branches
    merge into the output. Streams a unit never traverses are ABSENT.

``gcratio``
    Two-segment sequence analysis. Each root counts lines to collect from
    one segment; per segment a binomial split yields GC/AT content (hit
    rates 0.35 and 0.50 so that input drift moves the output); contents are
    aggregated and the target is gc_sum / (gc_sum + at_sum).

``throughput``
    Four-stage chain (load, parse, chart building, render) observed as
    messages per 5-second window. Per window each stage's capacity is
    floor(5 / mean service time) plus small integer noise, service times
    exponential with mean 0.05 s, and a stage's throughput is the minimum
    of its upstream throughput and its own capacity.

Faults: ``bug`` (the low-value classifier routes everything to simple),
``shift`` (a root stream's values are scaled), ``latency`` (per-message
delay added to one throughput stage).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace
from enum import Enum

import numpy as np
from scipy.stats import t as student_t

from .attribution import AttributionConfig, attribute_change
from .dataset import WindowLabel, WindowedDataset
from .graph import ComputeNode, DataflowGraph
from .seeding import derive_seed
from .stats import welch_t_test

INSURANCE = "insurance"
GCRATIO = "gcratio"
THROUGHPUT = "throughput"

HIGH_VALUE_THRESHOLD = 10_000.0
COMPLEXITY_THRESHOLD = 5_000.0
SIMPLE_PAYOUT_FACTOR = 0.9
COMPLEX_PAYOUT_FACTOR = 0.45
WINDOW_SECONDS = 5.0
BASE_SERVICE_MEAN = 0.05
MESSAGES_PER_PROBE = 100


class FaultKind(str, Enum):
    LOGIC_BUG = "bug"
    INPUT_SHIFT = "shift"
    LATENCY = "latency"


class SimulationError(ValueError):
    """Fault specification does not fit the pipeline."""


@dataclass(frozen=True)
class FaultSpec:
    """A controlled intervention used to generate ground-truth tasks.

    ``factor`` scales the shifted root stream (None picks the pipeline
    default: 1.5 for insurance, 2.0 for gcratio). ``delay`` bounds the
    per-message uniform sleep of a latency fault, in seconds.
    """

    kind: FaultKind
    location: str
    factor: float | None = None
    delay: tuple[float, float] = (0.5, 1.0)

    def describe(self) -> str:
        if self.kind is FaultKind.INPUT_SHIFT and self.factor is not None:
            return f"{self.kind.value}:{self.location}:{self.factor}"
        if self.kind is FaultKind.LATENCY:
            return f"{self.kind.value}:{self.location}:{self.delay[0]},{self.delay[1]}"
        return f"{self.kind.value}:{self.location}"


@dataclass(frozen=True)
class PipelineSpec:
    """A reference pipeline: its graph plus generator defaults."""

    name: str
    graph: DataflowGraph
    n_units_default: int
    shift_factor_default: float
    unit_prefix: str


def _insurance_graph() -> DataflowGraph:
    streams = (
        "input",
        "calculate_claim_value",
        "low_value_claims",
        "high_value_claims",
        "simple_claims",
        "complex_claims",
        "calculate_simple_claim_payout",
        "calculate_complex_claim_payout",
        "output",
    )
    nodes = (
        ComputeNode("calculate_claim_value_op", ("input",), ("calculate_claim_value",)),
        ComputeNode("route_by_value_op", ("calculate_claim_value",), ("low_value_claims", "high_value_claims")),
        ComputeNode("classify_claim_complexity_op", ("low_value_claims",), ("simple_claims", "complex_claims")),
        ComputeNode("simple_payout_op", ("simple_claims",), ("calculate_simple_claim_payout",)),
        ComputeNode("complex_payout_op", ("complex_claims", "high_value_claims"), ("calculate_complex_claim_payout",)),
        ComputeNode("merge_op", ("calculate_simple_claim_payout", "calculate_complex_claim_payout"), ("output",)),
    )
    return DataflowGraph(streams, nodes, "output")


def _gcratio_graph() -> DataflowGraph:
    streams = ("count1", "count2", "gc1", "at1", "gc2", "at2", "gc_sum", "at_sum", "gc_ratio")
    nodes = (
        ComputeNode("extract_segment1_op", ("count1",), ("gc1", "at1")),
        ComputeNode("extract_segment2_op", ("count2",), ("gc2", "at2")),
        ComputeNode("aggregate_gc_op", ("gc1", "gc2"), ("gc_sum",)),
        ComputeNode("aggregate_at_op", ("at1", "at2"), ("at_sum",)),
        ComputeNode("ratio_op", ("gc_sum", "at_sum"), ("gc_ratio",)),
    )
    return DataflowGraph(streams, nodes, "gc_ratio")


def _throughput_graph() -> DataflowGraph:
    streams = ("load_data", "parse_data", "build_quake_charts", "render")
    nodes = (
        ComputeNode("parse_data_op", ("load_data",), ("parse_data",)),
        ComputeNode("build_quake_charts_op", ("parse_data",), ("build_quake_charts",)),
        ComputeNode("render_op", ("build_quake_charts",), ("render",)),
    )
    return DataflowGraph(streams, nodes, "render")


_PIPELINES = {
    INSURANCE: PipelineSpec(INSURANCE, _insurance_graph(), 1000, 1.5, "t"),
    GCRATIO: PipelineSpec(GCRATIO, _gcratio_graph(), 1000, 2.0, "t"),
    THROUGHPUT: PipelineSpec(THROUGHPUT, _throughput_graph(), 200, 1.5, "w"),
}


def pipeline_names() -> tuple[str, ...]:
    return tuple(_PIPELINES)


def get_pipeline(name: str) -> PipelineSpec:
    try:
        return _PIPELINES[name]
    except KeyError:
        raise SimulationError(f"unknown pipeline {name!r}") from None


def parse_fault(text: str) -> FaultSpec:
    """Parse the ``kind:location[:param]`` fault grammar.

    Examples: ``bug:classify_claim_complexity_op``, ``shift:input:1.5``,
    ``latency:build_quake_charts:0.5,1.0``.
    """
    parts = text.split(":")
    if len(parts) < 2 or not all(parts[:2]):
        raise SimulationError(f"fault spec {text!r} must look like kind:location[:param]")
    kind_text, location = parts[0], parts[1]
    try:
        kind = FaultKind(kind_text)
    except ValueError:
        raise SimulationError(f"unknown fault kind {kind_text!r}") from None
    param = parts[2] if len(parts) > 2 else None
    if len(parts) > 3:
        raise SimulationError(f"fault spec {text!r} has too many fields")
    if kind is FaultKind.LOGIC_BUG:
        if param is not None:
            raise SimulationError("bug faults take no parameter")
        return FaultSpec(kind, location)
    if kind is FaultKind.INPUT_SHIFT:
        factor = None
        if param is not None:
            try:
                factor = float(param)
            except ValueError:
                raise SimulationError(f"shift factor {param!r} is not a number") from None
        return FaultSpec(kind, location, factor=factor)
    delay = (0.5, 1.0)
    if param is not None:
        pieces = param.split(",")
        if len(pieces) != 2:
            raise SimulationError("latency parameter must be 'low,high' seconds")
        try:
            delay = (float(pieces[0]), float(pieces[1]))
        except ValueError:
            raise SimulationError(f"latency bounds {param!r} are not numbers") from None
        if not 0 <= delay[0] <= delay[1]:
            raise SimulationError("latency bounds must satisfy 0 <= low <= high")
    return FaultSpec(kind, location, delay=delay)


def _validate_fault(spec: PipelineSpec, fault: FaultSpec) -> FaultSpec:
    node_ids = {n.id for n in spec.graph.nodes}
    roots = {s for s in spec.graph.streams if spec.graph.is_root(s)}
    if fault.kind is FaultKind.LOGIC_BUG:
        if spec.name != INSURANCE or fault.location != "classify_claim_complexity_op":
            raise SimulationError(
                "bug faults are supported at node classify_claim_complexity_op of the insurance pipeline"
            )
    elif fault.kind is FaultKind.INPUT_SHIFT:
        if fault.location not in roots:
            raise SimulationError(
                f"shift faults target a root stream; {fault.location!r} is not one of {sorted(roots)}"
            )
        if fault.factor is None:
            fault = dc_replace(fault, factor=spec.shift_factor_default)
        if fault.factor <= 0:
            raise SimulationError("shift factor must be positive")
    else:
        if spec.name != THROUGHPUT:
            raise SimulationError("latency faults apply to the throughput pipeline only")
        if fault.location not in node_ids:
            raise SimulationError(
                f"latency faults target a compute node; {fault.location!r} is not one of {sorted(node_ids)}"
            )
    return fault


def _shift_factor(fault: FaultSpec | None, stream: str, default: float) -> float:
    if fault is not None and fault.kind is FaultKind.INPUT_SHIFT and fault.location == stream:
        return fault.factor if fault.factor is not None else default
    return 1.0


def _simulate_insurance(fault: FaultSpec | None, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    bug = fault is not None and fault.kind is FaultKind.LOGIC_BUG
    raw = rng.lognormal(mean=9.0, sigma=0.5, size=n)
    raw *= _shift_factor(fault, "input", 1.5)
    value = raw * rng.uniform(0.95, 1.05, size=n)
    complexity_draw = value * rng.uniform(0.8, 1.2, size=n)
    high = value > HIGH_VALUE_THRESHOLD
    low = ~high
    complex_flag = low & (complexity_draw > COMPLEXITY_THRESHOLD) & (not bug)
    simple_flag = low & ~complex_flag

    nan = np.nan
    low_vals = np.where(low, value, nan)
    high_vals = np.where(high, value, nan)
    simple_vals = np.where(simple_flag, value, nan)
    complex_vals = np.where(complex_flag, value, nan)
    simple_payout = np.where(simple_flag, SIMPLE_PAYOUT_FACTOR * value, nan)
    complex_payout = np.where(
        complex_flag | high, COMPLEX_PAYOUT_FACTOR * value, nan
    )
    output = np.where(simple_flag, SIMPLE_PAYOUT_FACTOR * value, COMPLEX_PAYOUT_FACTOR * value)
    return {
        "input": raw,
        "calculate_claim_value": value,
        "low_value_claims": low_vals,
        "high_value_claims": high_vals,
        "simple_claims": simple_vals,
        "complex_claims": complex_vals,
        "calculate_simple_claim_payout": simple_payout,
        "calculate_complex_claim_payout": complex_payout,
        "output": output,
    }


def _simulate_gcratio(fault: FaultSpec | None, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    count1 = rng.integers(800, 1201, size=n).astype(np.float64)
    count2 = rng.integers(800, 1201, size=n).astype(np.float64)
    count1 = np.rint(count1 * _shift_factor(fault, "count1", 2.0))
    count2 = np.rint(count2 * _shift_factor(fault, "count2", 2.0))
    gc1 = rng.binomial(count1.astype(np.int64), 0.35).astype(np.float64)
    at1 = count1 - gc1
    gc2 = rng.binomial(count2.astype(np.int64), 0.50).astype(np.float64)
    at2 = count2 - gc2
    gc_sum = gc1 + gc2
    at_sum = at1 + at2
    return {
        "count1": count1,
        "count2": count2,
        "gc1": gc1,
        "at1": at1,
        "gc2": gc2,
        "at2": at2,
        "gc_sum": gc_sum,
        "at_sum": at_sum,
        "gc_ratio": gc_sum / (gc_sum + at_sum),
    }


def _simulate_throughput(fault: FaultSpec | None, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    stages = ("load_data", "parse_data", "build_quake_charts", "render")
    slow_stage = None
    if fault is not None and fault.kind is FaultKind.LATENCY:
        slow_stage = fault.location.removesuffix("_op")
    columns: dict[str, np.ndarray] = {}
    upstream = np.full(n, np.inf)
    for stage in stages:
        service = rng.exponential(BASE_SERVICE_MEAN, size=(n, MESSAGES_PER_PROBE))
        if stage == slow_stage:
            service = service + rng.uniform(fault.delay[0], fault.delay[1], size=(n, MESSAGES_PER_PROBE))
        capacity = np.floor(WINDOW_SECONDS / service.mean(axis=1)) + rng.integers(-2, 3, size=n)
        throughput = np.maximum(np.minimum(upstream, capacity), 1.0)
        columns[stage] = throughput
        upstream = throughput
    return columns


def simulate(
    spec: PipelineSpec,
    fault: FaultSpec | None,
    n_units: int,
    seed: int,
    window: WindowLabel | None = None,
) -> WindowedDataset:
    """Run the pipeline for ``n_units`` units under an optional fault.

    Byte-for-byte reproducible for a given (spec, fault, n_units, seed).
    The window label defaults to OLD for fault-free runs and NEW otherwise.
    """
    if n_units < 1:
        raise SimulationError("n_units must be positive")
    if fault is not None:
        fault = _validate_fault(spec, fault)
    rng = np.random.default_rng(seed)
    if spec.name == INSURANCE:
        columns = _simulate_insurance(fault, n_units, rng)
    elif spec.name == GCRATIO:
        columns = _simulate_gcratio(fault, n_units, rng)
    else:
        columns = _simulate_throughput(fault, n_units, rng)
    if window is None:
        window = WindowLabel.OLD if fault is None else WindowLabel.NEW
    width = max(4, len(str(n_units - 1)))
    unit_ids = tuple(f"{spec.unit_prefix}{i:0{width}d}" for i in range(n_units))
    ordered = {s: columns[s] for s in spec.graph.streams}
    return WindowedDataset(unit_ids, ordered, window)


def dataset_manifest(
    spec: PipelineSpec, fault: FaultSpec | None, n_units: int, seed: int
) -> dict:
    """Provenance record written next to simulated datasets."""
    return {
        "pipeline": spec.name,
        "fault": None if fault is None else fault.describe(),
        "n_units": n_units,
        "seed": seed,
        "target": spec.graph.target,
        "streams": list(spec.graph.streams),
    }


@dataclass(frozen=True)
class StreamOutcome:
    """Cross-repeat aggregate for one stream.

    ``mean_score`` and the confidence interval summarise the signed scores;
    ``mean_abs_score`` is the ranking statistic (consistent with the
    absolute-share probabilities of a single report), and the Welch test
    compares the winner's score magnitudes against this stream's.
    """

    stream: str
    mean_score: float
    ci_low: float
    ci_high: float
    mean_abs_score: float
    welch_t: float | None
    welch_p: float | None


@dataclass(frozen=True)
class ExperimentSummary:
    """Aggregate of repeated localisations under one fault scenario."""

    pipeline: str
    fault: str | None
    target: str
    repeats: int
    seed: int
    n_units: int
    winner: str
    rows: tuple[StreamOutcome, ...]
    config: AttributionConfig
    scores_by_repeat: dict[str, tuple[float, ...]]

    def row(self, stream: str) -> StreamOutcome:
        for r in self.rows:
            if r.stream == stream:
                return r
        raise KeyError(f"no row for stream {stream!r}")

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "fault": self.fault,
            "target": self.target,
            "repeats": self.repeats,
            "seed": self.seed,
            "n_units": self.n_units,
            "winner": self.winner,
            "config": self.config.to_dict(),
            "rows": [
                {
                    "stream": r.stream,
                    "mean_score": r.mean_score,
                    "ci_low": r.ci_low,
                    "ci_high": r.ci_high,
                    "mean_abs_score": r.mean_abs_score,
                    "welch_t": r.welch_t,
                    "welch_p": r.welch_p,
                }
                for r in self.rows
            ],
            "scores_by_repeat": {s: list(v) for s, v in self.scores_by_repeat.items()},
        }


def summary_from_dict(doc: dict) -> ExperimentSummary:
    rows = tuple(
        StreamOutcome(
            stream=r["stream"],
            mean_score=float(r["mean_score"]),
            ci_low=float(r["ci_low"]),
            ci_high=float(r["ci_high"]),
            mean_abs_score=float(r["mean_abs_score"]),
            welch_t=None if r["welch_t"] is None else float(r["welch_t"]),
            welch_p=None if r["welch_p"] is None else float(r["welch_p"]),
        )
        for r in doc["rows"]
    )
    return ExperimentSummary(
        pipeline=doc["pipeline"],
        fault=doc["fault"],
        target=doc["target"],
        repeats=int(doc["repeats"]),
        seed=int(doc["seed"]),
        n_units=int(doc["n_units"]),
        winner=doc["winner"],
        rows=rows,
        config=AttributionConfig(**doc["config"]),
        scores_by_repeat={s: tuple(v) for s, v in doc["scores_by_repeat"].items()},
    )


def run_experiment(
    spec: PipelineSpec,
    fault: FaultSpec | None,
    repeats: int,
    config: AttributionConfig,
    n_units: int | None = None,
) -> ExperimentSummary:
    """Repeat the localisation on fresh random inputs and aggregate scores.

    Per repeat, an OLD window is simulated fault-free and a NEW window with
    the fault applied (both with repeat-specific sub-seeds), the attribution
    runs, and per-stream scores are collected. The summary reports each
    stream's mean signed score with a 95% t-interval over repeats. The
    winner is the stream with the highest mean score magnitude (the same
    ordering the report probabilities use), and each row carries a Welch
    t-test of the winner's magnitudes against that stream's.
    """
    if repeats < 2:
        raise SimulationError("repeats must be at least 2")
    if fault is not None:
        fault = _validate_fault(spec, fault)
    n = n_units if n_units is not None else spec.n_units_default
    graph = spec.graph
    target = graph.target
    streams = graph.ancestors_of_target(target)
    collected: dict[str, list[float]] = {s: [] for s in streams}
    for r in range(repeats):
        old = simulate(spec, None, n, derive_seed(config.master_seed, "simulate-old", r), WindowLabel.OLD)
        new = simulate(spec, fault, n, derive_seed(config.master_seed, "simulate-new", r), WindowLabel.NEW)
        repeat_config = dc_replace(
            config, master_seed=derive_seed(config.master_seed, "attribution", r)
        )
        report = attribute_change(graph, old, new, target, repeat_config)
        for s in streams:
            collected[s].append(report.scores[s])

    magnitudes = {s: np.abs(collected[s]) for s in streams}
    winner = max(streams, key=lambda s: float(magnitudes[s].mean()))
    t_crit = float(student_t.ppf(0.975, repeats - 1))
    rows = []
    order = [s for s in graph.topological_order() if s in set(streams)]
    for s in order:
        scores = np.asarray(collected[s])
        mean = float(scores.mean())
        half_width = t_crit * float(scores.std(ddof=1)) / math.sqrt(repeats)
        if s == winner:
            w_t, w_p = None, None
        else:
            w_t, w_p = welch_t_test(magnitudes[winner], magnitudes[s])
        rows.append(
            StreamOutcome(
                stream=s,
                mean_score=mean,
                ci_low=mean - half_width,
                ci_high=mean + half_width,
                mean_abs_score=float(magnitudes[s].mean()),
                welch_t=w_t,
                welch_p=w_p,
            )
        )
    return ExperimentSummary(
        pipeline=spec.name,
        fault=None if fault is None else fault.describe(),
        target=target,
        repeats=repeats,
        seed=config.master_seed,
        n_units=n,
        winner=winner,
        rows=tuple(rows),
        config=config,
        scores_by_repeat={s: tuple(collected[s]) for s in order},
    )
