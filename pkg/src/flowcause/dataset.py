"""Per-stream observations aligned by analysis unit for one time window.

A unit is one end-to-end trace for business pipelines, or one fixed-length
wall-clock window for throughput pipelines. Cells that a unit never produced
(e.g. a claim routed down the other branch) are ABSENT, represented as NaN
internally and as an empty cell on disk, until an imputation policy is
applied.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .graph import DataflowGraph, UnknownStreamError

ABSENT = float("nan")


class DatasetError(ValueError):
    """Malformed tabular source or an operation emptying the dataset."""


class WindowLabel(str, Enum):
    OLD = "old"
    NEW = "new"


class ImputePolicy(str, Enum):
    ZERO = "zero"
    DROP_UNIT = "drop_unit"


@dataclass(frozen=True)
class WindowedDataset:
    """Column-oriented observations: one float64 array per stream.

    All columns have the same length as ``unit_ids``; NaN marks ABSENT.
    Instances are treated as immutable after construction.
    """

    unit_ids: tuple[str, ...]
    columns: dict[str, np.ndarray]
    window: WindowLabel

    def __post_init__(self) -> None:
        n = len(self.unit_ids)
        if n < 1:
            raise DatasetError("dataset must contain at least one unit")
        for s, col in self.columns.items():
            if col.shape != (n,):
                raise DatasetError(
                    f"column {s!r} has length {col.shape[0]}, expected {n}"
                )

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def streams(self) -> tuple[str, ...]:
        return tuple(self.columns)

    def column(self, s: str) -> np.ndarray:
        try:
            return self.columns[s]
        except KeyError:
            raise UnknownStreamError(f"dataset has no column for stream {s!r}") from None

    def has_absent(self, streams: tuple[str, ...] | None = None) -> bool:
        use = streams if streams is not None else self.streams
        return any(np.isnan(self.columns[s]).any() for s in use)


def _parse_cell(text: str, row: int, col_name: str) -> float:
    if text == "":
        return ABSENT
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(
            f"non-numeric cell {text!r} in column {col_name!r}, data row {row}"
        ) from None
    if not math.isfinite(value):
        raise DatasetError(
            f"non-finite cell {text!r} in column {col_name!r}, data row {row}"
        )
    return value


def read_window_csv(text: str, graph: DataflowGraph, window: WindowLabel) -> WindowedDataset:
    """Parse CSV with a leading ``unit_id`` column and stream-named columns.

    Empty cells become ABSENT. Column order is normalised to the graph's
    stream declaration order regardless of the order on disk.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("empty document: missing header row") from None
    if not header or header[0] != "unit_id":
        raise DatasetError("first column must be 'unit_id'")
    names = header[1:]
    known = set(graph.streams)
    for name in names:
        if name not in known:
            raise DatasetError(f"column {name!r} is not a stream of the graph")
    if len(set(names)) != len(names):
        raise DatasetError("duplicate stream columns in header")
    unit_ids: list[str] = []
    cells: list[list[float]] = []
    for i, row in enumerate(reader):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetError(
                f"data row {i} has {len(row)} cells, expected {len(header)}"
            )
        unit_ids.append(row[0])
        cells.append([_parse_cell(row[1 + j], i, names[j]) for j in range(len(names))])
    if not unit_ids:
        raise DatasetError("no data rows")
    matrix = np.asarray(cells, dtype=np.float64)
    ordered = [s for s in graph.streams if s in names]
    columns = {s: matrix[:, names.index(s)].copy() for s in ordered}
    return WindowedDataset(tuple(unit_ids), columns, window)


def read_window_jsonl(text: str, graph: DataflowGraph, window: WindowLabel) -> WindowedDataset:
    """Parse JSONL: one object per unit, keys are stream ids.

    A missing key or an explicit ``null`` is ABSENT. An optional ``unit_id``
    key names the unit; the line index is used otherwise.
    """
    known = set(graph.streams)
    records: list[dict] = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise DatasetError(f"line {i}: invalid JSON: {err.msg}") from err
        if not isinstance(obj, dict):
            raise DatasetError(f"line {i}: expected an object")
        records.append(obj)
    if not records:
        raise DatasetError("no data rows")
    seen_streams: list[str] = []
    for obj in records:
        for key in obj:
            if key == "unit_id":
                continue
            if key not in known:
                raise DatasetError(f"key {key!r} is not a stream of the graph")
            if key not in seen_streams:
                seen_streams.append(key)
    unit_ids = []
    for i, obj in enumerate(records):
        unit_ids.append(str(obj.get("unit_id", f"u{i}")))
    ordered = [s for s in graph.streams if s in seen_streams]
    columns: dict[str, np.ndarray] = {}
    for s in ordered:
        col = np.empty(len(records), dtype=np.float64)
        for i, obj in enumerate(records):
            value = obj.get(s)
            if value is None:
                col[i] = ABSENT
            elif isinstance(value, bool) or not isinstance(value, (int, float)):
                raise DatasetError(f"line {i}: value for {s!r} is not a number")
            elif not math.isfinite(value):
                raise DatasetError(f"line {i}: non-finite value for {s!r}")
            else:
                col[i] = float(value)
        columns[s] = col
    return WindowedDataset(tuple(unit_ids), columns, window)


def load_window(path: str | Path, graph: DataflowGraph, window: WindowLabel) -> WindowedDataset:
    """Load a window from a ``.csv`` or ``.jsonl`` file."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".jsonl":
        return read_window_jsonl(text, graph, window)
    return read_window_csv(text, graph, window)


def to_csv_text(ds: WindowedDataset) -> str:
    """Serialise back to the CSV layout accepted by :func:`read_window_csv`."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["unit_id", *ds.streams])
    for i, uid in enumerate(ds.unit_ids):
        row = [uid]
        for s in ds.streams:
            v = ds.columns[s][i]
            row.append("" if math.isnan(v) else repr(float(v)))
        writer.writerow(row)
    return buf.getvalue()


def write_window_csv(ds: WindowedDataset, path: str | Path) -> None:
    Path(path).write_text(to_csv_text(ds), encoding="utf-8")


def impute_absent(ds: WindowedDataset, policy: ImputePolicy | str = ImputePolicy.ZERO) -> WindowedDataset:
    """Resolve ABSENT cells: ZERO writes 0.0, DROP_UNIT removes the row.

    ZERO encodes "the unit never traversed this stream" for strictly
    positive payloads, so routing-rate changes stay visible to
    distribution tests.
    """
    policy = ImputePolicy(policy)
    if not ds.has_absent():
        return ds
    if policy is ImputePolicy.ZERO:
        columns = {s: np.nan_to_num(col, nan=0.0) for s, col in ds.columns.items()}
        return replace(ds, columns=columns)
    keep = ~np.logical_or.reduce([np.isnan(col) for col in ds.columns.values()])
    if not keep.any():
        raise DatasetError("DROP_UNIT imputation removed every unit")
    unit_ids = tuple(uid for uid, k in zip(ds.unit_ids, keep) if k)
    columns = {s: col[keep].copy() for s, col in ds.columns.items()}
    return replace(ds, unit_ids=unit_ids, columns=columns)


def summary_stats(ds: WindowedDataset) -> dict[str, dict]:
    """Per-stream moments over present cells plus the ABSENT fraction.

    For an all-ABSENT column the moments are None. Variance is the sample
    variance and is defined as 0.0 for a single observation.
    """
    out: dict[str, dict] = {}
    for s, col in ds.columns.items():
        present = col[~np.isnan(col)]
        n = int(present.size)
        absent_fraction = 1.0 - n / col.size
        if n == 0:
            out[s] = {
                "n": 0,
                "mean": None,
                "variance": None,
                "min": None,
                "max": None,
                "absent_fraction": absent_fraction,
            }
            continue
        out[s] = {
            "n": n,
            "mean": float(present.mean()),
            "variance": float(present.var(ddof=1)) if n > 1 else 0.0,
            "min": float(present.min()),
            "max": float(present.max()),
            "absent_fraction": absent_fraction,
        }
    return out
