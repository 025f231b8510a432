"""The ``analyze`` report: ANOVA table, transfer results, rank correlations, plots."""

import itertools
import json
import os

from untangle.analysis import (GROUPINGS, CoverageError, anova_variance_explained,
                               transfer_vs_random)
from untangle.plots import export_plots
from untangle.study import UNSUPERVISED


def _round(x):
    return None if x != x else round(float(x), 12)


def anova_table(store):
    rows = []
    groupings = [g for g in GROUPINGS if g != "world" or len(store.worlds) > 1]
    for world in [None] + store.worlds:
        for metric in store.metrics:
            for grouping in groupings:
                if world is not None and grouping == "world":
                    continue
                res = anova_variance_explained(store, metric, grouping, world=world)
                rows.append({"world": world or "*", "metric": metric, "grouping": grouping,
                             "fraction": _round(res.fraction), "degenerate": res.degenerate,
                             "n_groups": res.n_groups})
    return rows


def transfer_table(store, trials=10000, seed=0):
    """Every ordered world pair; a lone world is compared with itself."""
    worlds = store.worlds
    pairs = list(itertools.permutations(worlds, 2)) or [(w, w) for w in worlds]
    rows = []
    for source, target in pairs:
        for metric in store.metrics:
            if metric in UNSUPERVISED:
                continue
            try:
                res = transfer_vs_random(store, source, target, metric, trials, seed)
                rows.append({"source": source, "target": target, "metric": metric,
                             "fraction": _round(res.fraction), "exact": _round(res.exact),
                             "trials": trials, "error": ""})
            except CoverageError as exc:
                rows.append({"source": source, "target": target, "metric": metric,
                             "fraction": None, "exact": None, "trials": trials,
                             "error": str(exc)})
    return rows


def _rows_tsv(rows):
    if not rows:
        return ""
    header = list(rows[0])
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join("" if row[k] is None else str(row[k]) for k in header))
    return "\n".join(lines) + "\n"


def write_report(store, report_dir, trials=10000, seed=0):
    os.makedirs(report_dir, exist_ok=True)
    anova = anova_table(store)
    transfer = transfer_table(store, trials, seed)
    with open(os.path.join(report_dir, "anova.tsv"), "w") as fh:
        fh.write(_rows_tsv(anova))
    with open(os.path.join(report_dir, "transfer.tsv"), "w") as fh:
        fh.write(_rows_tsv(transfer))
    plots = export_plots(store, os.path.join(report_dir, "plots"))
    summary = {"n_records": len(store), "n_runs": len(store.run_ids), "worlds": store.worlds,
               "metrics": store.metrics, "anova": anova, "transfer": transfer,
               "files": sorted(os.path.relpath(p, report_dir) for p in plots)}
    with open(os.path.join(report_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary
