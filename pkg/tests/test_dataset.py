import math

import numpy as np
import pytest

from flowcause.dataset import (
    DatasetError,
    ImputePolicy,
    WindowLabel,
    WindowedDataset,
    impute_absent,
    load_window,
    read_window_csv,
    read_window_jsonl,
    summary_stats,
    to_csv_text,
)
from flowcause.graph import ComputeNode, DataflowGraph

GRAPH = DataflowGraph(
    streams=("a", "b", "complex_claims"),
    nodes=(ComputeNode("f", ("a", "b"), ("complex_claims",)),),
    target="complex_claims",
)

CSV_FULL = "unit_id,a,b,complex_claims\nu0,1,2,3\nu1,4,5,6\nu2,7,8,9\n"


def test_load_csv_full():
    ds = read_window_csv(CSV_FULL, GRAPH, WindowLabel.OLD)
    assert ds.n_units == 3
    assert ds.unit_ids == ("u0", "u1", "u2")
    assert not ds.has_absent()
    assert list(ds.column("a")) == [1.0, 4.0, 7.0]


def test_load_csv_empty_cell_is_absent():
    text = "unit_id,a,complex_claims\nu0,1,\nu1,2,5\n"
    ds = read_window_csv(text, GRAPH, WindowLabel.NEW)
    assert math.isnan(ds.column("complex_claims")[0])
    assert ds.column("complex_claims")[1] == 5.0


def test_load_csv_unknown_column():
    text = "unit_id,a,bogus\nu0,1,2\n"
    with pytest.raises(DatasetError, match="bogus"):
        read_window_csv(text, GRAPH, WindowLabel.OLD)


def test_load_csv_ragged_row():
    text = "unit_id,a,b\nu0,1\n"
    with pytest.raises(DatasetError, match="row 0"):
        read_window_csv(text, GRAPH, WindowLabel.OLD)


def test_load_csv_non_numeric_cell():
    text = "unit_id,a\nu0,apple\n"
    with pytest.raises(DatasetError, match="apple"):
        read_window_csv(text, GRAPH, WindowLabel.OLD)
    with pytest.raises(DatasetError, match="non-finite"):
        read_window_csv("unit_id,a\nu0,nan\n", GRAPH, WindowLabel.OLD)


def test_load_csv_zero_rows():
    with pytest.raises(DatasetError, match="no data rows"):
        read_window_csv("unit_id,a\n", GRAPH, WindowLabel.OLD)


def test_load_csv_column_order_normalised():
    text = "unit_id,complex_claims,a\nu0,3,1\n"
    ds = read_window_csv(text, GRAPH, WindowLabel.OLD)
    assert ds.streams == ("a", "complex_claims")


def test_csv_roundtrip(tmp_path):
    ds = read_window_csv("unit_id,a,b\nu0,1.5,\nu1,2.25,0.125\n", GRAPH, WindowLabel.OLD)
    path = tmp_path / "window.csv"
    path.write_text(to_csv_text(ds), encoding="utf-8")
    again = load_window(path, GRAPH, WindowLabel.OLD)
    assert again.unit_ids == ds.unit_ids
    for s in ds.streams:
        np.testing.assert_array_equal(again.column(s), ds.column(s))


def test_load_jsonl(tmp_path):
    path = tmp_path / "window.jsonl"
    path.write_text(
        '{"unit_id": "x", "a": 1, "b": 2}\n{"unit_id": "y", "a": 3}\n',
        encoding="utf-8",
    )
    ds = load_window(path, GRAPH, WindowLabel.NEW)
    assert ds.unit_ids == ("x", "y")
    assert math.isnan(ds.column("b")[1])


def test_load_jsonl_rejects_unknown_key():
    with pytest.raises(DatasetError, match="bogus"):
        read_window_jsonl('{"bogus": 1}', GRAPH, WindowLabel.OLD)


def test_impute_identity_when_nothing_absent():
    ds = read_window_csv(CSV_FULL, GRAPH, WindowLabel.OLD)
    assert impute_absent(ds, ImputePolicy.ZERO) is ds


def test_impute_zero_wins_routing_semantics():
    text = "unit_id,a,complex_claims\nu0,1,\nu1,2,5\n"
    ds = read_window_csv(text, GRAPH, WindowLabel.OLD)
    out = impute_absent(ds, ImputePolicy.ZERO)
    assert out.column("complex_claims")[0] == 0.0
    assert out.n_units == ds.n_units


def test_impute_drop_unit():
    text = "unit_id,a,complex_claims\nu0,1,\nu1,2,5\n"
    ds = read_window_csv(text, GRAPH, WindowLabel.OLD)
    out = impute_absent(ds, "drop_unit")
    assert out.unit_ids == ("u1",)
    assert set(out.unit_ids) <= set(ds.unit_ids)


def test_impute_drop_unit_empty_errors():
    ds = read_window_csv("unit_id,a,b\nu0,1,\n", GRAPH, WindowLabel.OLD)
    with pytest.raises(DatasetError, match="every unit"):
        impute_absent(ds, ImputePolicy.DROP_UNIT)


def test_summary_stats_basic():
    ds = WindowedDataset(
        ("u0", "u1", "u2"),
        {"a": np.array([1.0, 2.0, 3.0])},
        WindowLabel.OLD,
    )
    stats = summary_stats(ds)["a"]
    assert stats["n"] == 3
    assert stats["mean"] == pytest.approx(2.0)
    assert stats["variance"] == pytest.approx(1.0)
    assert stats["min"] == 1.0 and stats["max"] == 3.0
    assert stats["absent_fraction"] == 0.0


def test_summary_stats_all_absent_and_single_value():
    ds = WindowedDataset(
        ("u0",),
        {"a": np.array([np.nan]), "b": np.array([5.0])},
        WindowLabel.OLD,
    )
    stats = summary_stats(ds)
    assert stats["a"]["absent_fraction"] == 1.0
    assert stats["a"]["mean"] is None and stats["a"]["variance"] is None
    assert stats["b"]["variance"] == 0.0


def test_zero_imputed_mean_bounded_by_present_mean_for_positive_values():
    text = "unit_id,a\nu0,2\nu1,\nu2,4\n"
    ds = read_window_csv(text, GRAPH, WindowLabel.OLD)
    present_mean = summary_stats(ds)["a"]["mean"]
    imputed_mean = summary_stats(impute_absent(ds, ImputePolicy.ZERO))["a"]["mean"]
    assert imputed_mean <= present_mean
