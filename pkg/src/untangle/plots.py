"""TSV summaries of a score store and static SVG figures drawn from them."""

from collections import defaultdict
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from untangle.analysis import QUANTILES, quantile_summary, rank_correlation_matrix  # noqa: E402

KINDS = ("score-distribution", "score-vs-strength", "heatmap")

# fixed ids and no timestamp so the SVG bytes depend only on the data
plt.rcParams["svg.hashsalt"] = "untangle"
SVG_META = {"Date": None, "Creator": None}


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=SVG_META, bbox_inches="tight")
    plt.close(fig)


def distribution_rows(store):
    """(world, metric, method, n, quantiles...) per non-empty group."""
    groups = defaultdict(list)
    for r in store.select():
        groups[(r.world, r.metric, r.method)].append(r.value)
    rows = []
    for key in sorted(groups):
        summary = quantile_summary(groups[key])
        rows.append(key + (len(groups[key]),) + tuple(summary[name] for name, _ in QUANTILES))
    return rows


def strength_rows(store):
    """(world, metric, method, hparam_name, hparam_value, n, median)."""
    groups = defaultdict(list)
    for r in store.select():
        groups[(r.world, r.metric, r.method, r.hparam_name, r.hparam_value)].append(r.value)
    return [key + (len(v), quantile_summary(v)["median"]) for key, v in sorted(groups.items())]


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _tsv(header, rows):
    lines = ["\t".join(header)] + ["\t".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _plot_distribution(rows, path):
    panels = sorted({(r[0], r[1]) for r in rows})
    fig, axes = plt.subplots(len(panels), 1, figsize=(6, 2.2 * len(panels)), squeeze=False)
    for ax, (world, metric) in zip(axes[:, 0], panels):
        sub = [r for r in rows if r[0] == world and r[1] == metric]
        for i, r in enumerate(sub):
            lo, q10, q25, med, q75, q90, hi = r[4:]
            ax.plot([i, i], [lo, hi], color="0.6", lw=1)
            ax.plot([i, i], [q10, q90], color="0.3", lw=3)
            ax.plot([i, i], [q25, q75], color="C0", lw=7)
            ax.plot([i - 0.2, i + 0.2], [med, med], color="k", lw=1.5)
        ax.set_xticks(range(len(sub)), [r[2] for r in sub])
        ax.set_xlim(-0.5, len(sub) - 0.5)
        ax.set_title(f"{metric} ({world})", fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def _plot_strength(rows, path):
    panels = sorted({(r[0], r[1]) for r in rows})
    fig, axes = plt.subplots(len(panels), 1, figsize=(6, 2.2 * len(panels)), squeeze=False)
    for ax, (world, metric) in zip(axes[:, 0], panels):
        methods = sorted({r[2] for r in rows if r[0] == world and r[1] == metric})
        for method in methods:
            series = [r for r in rows if r[:3] == (world, metric, method)]
            ax.plot(range(len(series)), [r[6] for r in series], marker="o", label=method)
        ax.set_xlabel("regularization strength (rank)")
        ax.set_title(f"{metric} ({world})", fontsize=9)
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def _plot_heatmap(matrix, path):
    fig, ax = plt.subplots(figsize=(1.2 + 0.7 * len(matrix.cols), 1.0 + 0.5 * len(matrix.rows)))
    ax.imshow(matrix.values, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(len(matrix.cols)), matrix.cols, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(matrix.rows)), matrix.rows, fontsize=7)
    for i, row in enumerate(matrix.values):
        for j, v in enumerate(row):
            if not math.isnan(v):
                ax.text(j, i, f"{v:.2f}", ha="center", va="center", fontsize=6)
    ax.set_title(matrix.title, fontsize=8)
    _save(fig, path)


def export_plots(store, out_dir, kinds=KINDS):
    """Write ``<kind>.tsv`` plus ``<kind>.svg`` files; returns the paths written."""
    if not len(store.select()):
        raise ValueError("store has no ok records to plot")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if "score-distribution" in kinds:
        rows = distribution_rows(store)
        header = ["world", "metric", "method", "n"] + [name for name, _ in QUANTILES]
        written.append(os.path.join(out_dir, "score-distribution.tsv"))
        _write(written[-1], _tsv(header, rows))
        written.append(os.path.join(out_dir, "score-distribution.svg"))
        _plot_distribution(rows, written[-1])
    if "score-vs-strength" in kinds:
        rows = strength_rows(store)
        header = ["world", "metric", "method", "hparam_name", "hparam_value", "n", "median"]
        written.append(os.path.join(out_dir, "score-vs-strength.tsv"))
        _write(written[-1], _tsv(header, rows))
        written.append(os.path.join(out_dir, "score-vs-strength.svg"))
        _plot_strength(rows, written[-1])
    if "heatmap" in kinds:
        for world in store.worlds:
            matrix = rank_correlation_matrix(store, "unsupervised", world=world)
            stem = os.path.join(out_dir, f"heatmap-unsupervised-{_slug(world)}")
            _write(stem + ".tsv", matrix.to_tsv())
            _plot_heatmap(matrix, stem + ".svg")
            written += [stem + ".tsv", stem + ".svg"]
        for metric in store.metrics:
            matrix = rank_correlation_matrix(store, "worlds", metric=metric)
            stem = os.path.join(out_dir, f"heatmap-worlds-{_slug(metric)}")
            _write(stem + ".tsv", matrix.to_tsv())
            _plot_heatmap(matrix, stem + ".svg")
            written += [stem + ".tsv", stem + ".svg"]
    return written


def _slug(text):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in text)
