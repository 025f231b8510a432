"""Model-selection statistics over a :class:`~untangle.study.RecordStore`."""

from collections import defaultdict
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.stats import rankdata

from untangle import rng as rng_mod
from untangle.study import UNSUPERVISED


class CoverageError(ValueError):
    def __init__(self, gaps):
        self.gaps = gaps
        shown = ", ".join(str(g) for g in gaps[:5])
        super().__init__(f"{len(gaps)} missing grid cell(s): {shown}"
                         + (" ..." if len(gaps) > 5 else ""))


# --------------------------------------------------------------------------
# variance explained


@dataclass(frozen=True)
class AnovaResult:
    fraction: float
    degenerate: bool
    n_groups: int
    ssb: float
    sst: float


def eta_squared(values, groups):
    """One-way ANOVA: between-group over total sum of squares."""
    values = np.asarray(values, dtype=np.float64)
    groups = list(groups)
    if values.size != len(groups):
        raise ValueError("values and groups differ in length")
    labels = sorted(set(groups))
    if values.size == 0:
        return AnovaResult(0.0, True, 0, 0.0, 0.0)
    mean = values.mean()
    sst = float(np.sum((values - mean) ** 2))
    index = {g: i for i, g in enumerate(labels)}
    codes = np.array([index[g] for g in groups])
    ssb = 0.0
    for i in range(len(labels)):
        member = values[codes == i]
        ssb += member.size * (member.mean() - mean) ** 2
    if len(labels) < 2 or sst <= 0:
        return AnovaResult(0.0, True, len(labels), float(ssb), sst)
    return AnovaResult(min(max(ssb / sst, 0.0), 1.0), False, len(labels), float(ssb), sst)


GROUPINGS = {
    "method": lambda r: r.method,
    "hyperparameter": lambda r: (r.method, r.hparam_name, r.hparam_value),
    "seed": lambda r: r.seed,
    "world": lambda r: r.world,
}


def anova_variance_explained(store, metric, grouping, world=None):
    """Fraction of ``metric`` variance explained by ``grouping``.

    ``hyperparameter`` groups by (method, strength), i.e. by grid cell, so its
    complement is the seed-level variance within cells.
    """
    if grouping not in GROUPINGS:
        raise ValueError(f"grouping must be one of {sorted(GROUPINGS)}")
    records = store.select(metric=metric, world=world)
    key = GROUPINGS[grouping]
    return eta_squared([r.value for r in records], [key(r) for r in records])


# --------------------------------------------------------------------------
# rank correlation


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    undefined: bool
    n: int


def spearman(xs, ys):
    """Pearson correlation of average ranks."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("spearman needs two vectors of equal length")
    if xs.size < 3:
        raise ValueError(f"spearman needs at least 3 points, got {xs.size}")
    rx = rankdata(xs) - (xs.size + 1) / 2.0
    ry = rankdata(ys) - (ys.size + 1) / 2.0
    sxx, syy = np.dot(rx, rx), np.dot(ry, ry)
    if sxx == 0 or syy == 0:
        return SpearmanResult(float("nan"), True, xs.size)
    rho = float(np.dot(rx, ry) / math.sqrt(sxx * syy))
    return SpearmanResult(min(max(rho, -1.0), 1.0), False, xs.size)


@dataclass
class LabeledMatrix:
    rows: list
    cols: list
    values: np.ndarray  # nan marks an undefined cell
    title: str = ""

    def to_tsv(self):
        lines = ["\t".join([self.title or "-"] + [str(c) for c in self.cols])]
        for name, row in zip(self.rows, self.values):
            cells = ["" if math.isnan(v) else f"{v:.6f}" for v in row]
            lines.append("\t".join([str(name)] + cells))
        return "\n".join(lines) + "\n"


def score_table(store, metric, world):
    return {r.model: r.value for r in store.select(metric=metric, world=world)}


def _matched_spearman(a, b):
    keys = sorted(set(a) & set(b))
    if len(keys) < 3:
        return float("nan")
    result = spearman([a[k] for k in keys], [b[k] for k in keys])
    return float("nan") if result.undefined else result.rho


def rank_correlation_matrix(store, axis, metric=None, world=None, metrics=None):
    """Spearman matrix over matched models.

    ``axis="worlds"``: worlds x worlds for one ``metric``.
    ``axis="unsupervised"``: unsupervised scores x disentanglement metrics in ``world``.
    """
    if axis == "worlds":
        if metric is None:
            raise ValueError("axis 'worlds' needs a metric")
        worlds = store.worlds
        tables = {w: score_table(store, metric, w) for w in worlds}
        values = np.array([[_matched_spearman(tables[a], tables[b]) for b in worlds]
                           for a in worlds]).reshape(len(worlds), len(worlds))
        return LabeledMatrix(worlds, worlds, values, title=metric)
    if axis == "unsupervised":
        if world is None:
            raise ValueError("axis 'unsupervised' needs a world")
        if metrics is None:
            metrics = [m for m in store.metrics if m not in UNSUPERVISED]
        rows = [u for u in UNSUPERVISED if u in store.metrics]
        tables = {m: score_table(store, m, world) for m in list(rows) + list(metrics)}
        values = np.array([[_matched_spearman(tables[u], tables[m]) for m in metrics]
                           for u in rows]).reshape(len(rows), len(metrics))
        return LabeledMatrix(rows, list(metrics), values, title=world)
    raise ValueError(f"axis must be 'worlds' or 'unsupervised', got {axis!r}")


# --------------------------------------------------------------------------
# transfer of hyperparameters vs random selection


@dataclass
class TransferResult:
    fraction: float
    exact: float
    trials: int
    per_method: dict = field(default_factory=dict)
    chosen: dict = field(default_factory=dict)


def _grid(store, world, metric):
    """method -> hyperparameter -> seed -> value."""
    grid = defaultdict(lambda: defaultdict(dict))
    for r in store.select(metric=metric, world=world):
        grid[r.method][(r.hparam_name, r.hparam_value)][r.seed] = r.value
    return grid


def _check_coverage(source, target, src_name, tgt_name):
    gaps = []
    for grid, other, name in ((source, target, tgt_name), (target, source, src_name)):
        for method, cells in grid.items():
            for hp, seeds in cells.items():
                for seed in seeds:
                    if seed not in other.get(method, {}).get(hp, {}):
                        gaps.append((name, method, hp[0], hp[1], seed))
    if gaps:
        raise CoverageError(sorted(set(gaps)))


def best_hyperparameter(cells):
    """Strength with the highest median score; ties go to the smallest value."""
    ranked = sorted(cells, key=lambda hp: (-float(np.median(list(cells[hp].values()))), hp[1]))
    return ranked[0]


def transfer_vs_random(store, source, target, metric, trials=10000, seed=0):
    """How often picking the source-best strength beats a random target model.

    For every method and trial, one target seed under the source-best strength
    is compared with one (strength, seed) drawn uniformly with replacement from
    the method's target runs; a strict win counts.  ``exact`` averages the same
    comparison over all pairs instead of sampling.
    """
    src, tgt = _grid(store, source, metric), _grid(store, target, metric)
    if not src or not tgt:
        raise CoverageError([(source if not src else target, metric)])
    _check_coverage(src, tgt, source, target)
    rng = rng_mod.make_rng(seed, rng_mod.STREAM_METRIC)
    wins = total = 0
    exact_sum = 0.0
    per_method, chosen = {}, {}
    for method in sorted(tgt):
        hp = best_hyperparameter(src[method])
        chosen[method] = hp
        picked = np.array([tgt[method][hp][s] for s in sorted(tgt[method][hp])])
        pool = np.array([tgt[method][h][s] for h in sorted(tgt[method])
                         for s in sorted(tgt[method][h])])
        a = picked[rng.integers(0, picked.size, size=trials)]
        b = pool[rng.integers(0, pool.size, size=trials)]
        method_wins = int(np.sum(a > b))
        exact = float(np.mean(picked[:, None] > pool[None, :]))
        per_method[method] = {"fraction": method_wins / trials, "exact": exact}
        wins += method_wins
        total += trials
        exact_sum += exact
    return TransferResult(wins / total, exact_sum / len(tgt), trials, per_method, chosen)


# --------------------------------------------------------------------------
# summaries


QUANTILES = (("min", 0.0), ("q10", 0.10), ("q25", 0.25), ("median", 0.5), ("q75", 0.75),
             ("q90", 0.90), ("max", 1.0))


def nearest_rank(sorted_values, q):
    n = len(sorted_values)
    if n == 0:
        raise ValueError("no values")
    rank = max(1, math.ceil(q * n))
    return sorted_values[min(rank, n) - 1]


def quantile_summary(values):
    ordered = sorted(float(v) for v in values)
    return {name: nearest_rank(ordered, q) for name, q in QUANTILES}
