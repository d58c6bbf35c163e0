"""Rendering of attribution reports and experiment summaries.

JSON is the storage format; Markdown tables and SVG bar charts are derived
views. All file writes are atomic (temp file + rename) and figure output is
deterministic so repeated runs produce identical bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .attribution import AttributionReport, report_from_dict
from .simulator import ExperimentSummary, summary_from_dict

plt.rcParams["svg.hashsalt"] = "flowcause"


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_json_text(obj: AttributionReport | ExperimentSummary) -> str:
    return json.dumps(obj.to_dict(), indent=2) + "\n"


def load_stored(path: str | Path) -> AttributionReport | ExperimentSummary:
    """Load a stored JSON artifact, detecting its kind from the keys."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "scores_by_repeat" in doc:
        return summary_from_dict(doc)
    return report_from_dict(doc)


def report_markdown(report: AttributionReport) -> str:
    lines = [
        f"# Change attribution for `{report.target}`",
        "",
        f"- target divergence (new vs old): {report.delta_y:.6g}",
        f"- normalisation: {report.normalisation}"
        + (" (all scores zero; probabilities are uniform)" if report.degenerate else ""),
        f"- seed: {report.seed}",
        "",
        "| node | score | probability | deviation p | changed |",
        "| --- | ---: | ---: | ---: | :---: |",
    ]
    for row in report.rows:
        flag = "yes" if row.deviation.changed else "no"
        lines.append(
            f"| {row.stream} | {row.score:.4f} | {row.probability:.3f} "
            f"| {row.deviation.p_value:.4g} | {flag} |"
        )
    return "\n".join(lines) + "\n"


def summary_markdown(summary: ExperimentSummary) -> str:
    fault = summary.fault if summary.fault is not None else "none"
    lines = [
        f"# Experiment: {summary.pipeline}, fault {fault}",
        "",
        f"- repeats: {summary.repeats}, window size: {summary.n_units}, seed: {summary.seed}",
        f"- winner: **{summary.winner}**",
        "",
        "| node | mean score | 95% CI | mean abs score | Welch p vs winner |",
        "| --- | ---: | :---: | ---: | ---: |",
    ]
    for row in summary.rows:
        p_text = "-" if row.welch_p is None else f"{row.welch_p:.3g}"
        lines.append(
            f"| {row.stream} | {row.mean_score:.4f} "
            f"| [{row.ci_low:.4f}, {row.ci_high:.4f}] | {row.mean_abs_score:.4f} | {p_text} |"
        )
    return "\n".join(lines) + "\n"


def render_markdown(obj: AttributionReport | ExperimentSummary) -> str:
    if isinstance(obj, ExperimentSummary):
        return summary_markdown(obj)
    return report_markdown(obj)


def _save_bar_chart(
    path: str | Path,
    labels: list[str],
    values: list[float],
    errors: list[float] | None,
    highlight: str | None,
    title: str,
) -> None:
    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(labels)), 4.0))
    colors = ["#d95f02" if lab == highlight else "#1f77b4" for lab in labels]
    ax.bar(labels, values, yerr=errors, capsize=3 if errors else 0, color=colors)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_ylabel("attribution score")
    ax.set_title(title)
    ax.tick_params(axis="x", rotation=45)
    for tick in ax.get_xticklabels():
        tick.set_horizontalalignment("right")
    fig.tight_layout()
    path = Path(path)
    metadata = {"Date": None} if path.suffix.lower() == ".svg" else None
    fig.savefig(path, metadata=metadata)
    plt.close(fig)


def save_figure(obj: AttributionReport | ExperimentSummary, path: str | Path) -> None:
    """Render the score chart for a report or summary to an image file."""
    if isinstance(obj, ExperimentSummary):
        labels = [r.stream for r in obj.rows]
        values = [r.mean_score for r in obj.rows]
        errors = [r.mean_score - r.ci_low for r in obj.rows]
        fault = obj.fault if obj.fault is not None else "none"
        _save_bar_chart(
            path, labels, values, errors, obj.winner,
            f"{obj.pipeline}: mean scores over {obj.repeats} repeats (fault {fault})",
        )
    else:
        labels = [r.stream for r in obj.rows]
        values = [r.score for r in obj.rows]
        _save_bar_chart(
            path, labels, values, None, obj.top_stream,
            f"attribution scores for {obj.target}",
        )
