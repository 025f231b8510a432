import os

import pytest

from test_analysis import synthetic_store
from untangle.plots import distribution_rows, export_plots, strength_rows
from untangle.reporting import anova_table, transfer_table, write_report
from untangle.study import RecordStore


def read_tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_report_files_are_byte_stable(tmp_path):
    store = synthetic_store(7)
    write_report(store, str(tmp_path / "one"), trials=1000)
    write_report(store, str(tmp_path / "two"), trials=1000)
    one, two = read_tree(tmp_path / "one"), read_tree(tmp_path / "two")
    assert one == two
    assert "plots/heatmap-worlds-mig.svg" in one
    assert b"<dc:date>" not in one["plots/score-distribution.svg"]


def test_tables_cover_groupings_and_pairs():
    store = synthetic_store(8)
    rows = anova_table(store)
    pooled = [r for r in rows if r["world"] == "*" and r["metric"] == "mig"]
    assert {r["grouping"] for r in pooled} == {"method", "hyperparameter", "seed", "world"}
    transfer = transfer_table(store, trials=500)
    assert {(r["source"], r["target"]) for r in transfer} == {("a", "b"), ("b", "a")}
    assert {r["metric"] for r in transfer} == {"mig", "sap"}


def test_single_world_transfer_compares_with_itself():
    store = synthetic_store(9, worlds=("a",))
    assert {(r["source"], r["target"]) for r in transfer_table(store, 200)} == {("a", "a")}


def test_plot_rows():
    store = synthetic_store(10)
    dist = distribution_rows(store)
    assert len(dist) == 2 * 4 * 2
    assert all(r[3] == (12 if r[2] == "beta_vae" else 8) for r in dist)
    assert all(r[4] <= r[7] <= r[10] for r in dist)
    assert len(strength_rows(store)) == 2 * 4 * 5


def test_export_needs_records(tmp_path):
    with pytest.raises(ValueError):
        export_plots(RecordStore(), str(tmp_path))
