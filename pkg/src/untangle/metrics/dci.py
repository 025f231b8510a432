"""DCI disentanglement from random-forest importances."""

import math

import numpy as np

from untangle import rng as rng_mod
from untangle.metrics.forest import RandomForest
from untangle.metrics.report import MetricReport, UndefinedMetric

MIN_TRAIN = 1000
MIN_TEST = 500


def split_train_test(n, rng, test_fraction=1 / 3):
    order = rng.permutation(n)
    n_test = max(MIN_TEST, int(round(n * test_fraction)))
    return order[n_test:], order[:n_test]


def _entropy_base(p, base):
    p = p[p > 0]
    return -math.fsum(p * np.log(p)) / math.log(base)


def disentanglement_from_importance(importance):
    """Importance-weighted mean over code dims of 1 - H_k(row profile)."""
    r = np.abs(np.asarray(importance, dtype=np.float64))
    d, k = r.shape
    # fsum is exactly rounded, so row order cannot change the result
    total = math.fsum(r.ravel())
    if total <= 0:
        return 0.0, np.zeros(d)
    per_dim = np.zeros(d)
    for i in range(d):
        row_sum = r[i].sum()
        if row_sum <= 0:
            continue
        per_dim[i] = 1.0 if k == 1 else 1.0 - _entropy_base(r[i] / row_sum, k)
    weights = r.sum(axis=1) / total
    return math.fsum(weights * per_dim), per_dim


def completeness_from_importance(importance):
    r = np.abs(np.asarray(importance, dtype=np.float64))
    d, k = r.shape
    total = math.fsum(r.ravel())
    if total <= 0:
        return 0.0, np.zeros(k)
    per_factor = np.zeros(k)
    for j in range(k):
        col_sum = math.fsum(r[:, j])
        if col_sum <= 0:
            continue
        per_factor[j] = 1.0 if d == 1 else 1.0 - _entropy_base(r[:, j] / col_sum, d)
    weights = np.array([math.fsum(col) for col in r.T]) / total
    return math.fsum(weights * per_factor), per_factor


def importance_matrix(reps, factors, seed, n_trees=10, max_depth=8):
    """Column-normalized forest importances plus per-factor test accuracy."""
    reps = np.asarray(reps, dtype=np.float64)
    factors = np.asarray(factors, dtype=np.int64)
    n = reps.shape[0]
    if n != factors.shape[0]:
        raise ValueError(f"reps have {n} rows, factors {factors.shape[0]}")
    if n < MIN_TRAIN + MIN_TEST:
        raise ValueError(f"DCI needs at least {MIN_TRAIN + MIN_TEST} samples, got {n}")
    rng = rng_mod.make_rng(seed, rng_mod.STREAM_METRIC)
    train, test = split_train_test(n, rng)
    kept = [j for j in range(factors.shape[1]) if np.unique(factors[:, j]).size > 1]
    if not kept:
        raise UndefinedMetric("DCI undefined: every factor is constant")
    r = np.zeros((reps.shape[1], len(kept)))
    accuracy = np.zeros(len(kept))
    for col, j in enumerate(kept):
        labels = np.unique(factors[:, j], return_inverse=True)[1].ravel()
        forest = RandomForest(int(labels.max()) + 1, n_trees=n_trees, max_depth=max_depth)
        forest.fit(reps[train], labels[train], rng)
        total = forest.importance.sum()
        r[:, col] = forest.importance / total if total > 0 else 0.0
        accuracy[col] = np.mean(forest.predict(reps[test]) == labels[test])
    return r, accuracy, kept


def dci_disentanglement(reps, factors, seed=0, n_trees=10, max_depth=8):
    r, accuracy, kept = importance_matrix(reps, factors, seed, n_trees, max_depth)
    score, per_dim = disentanglement_from_importance(r)
    completeness, _ = completeness_from_importance(r)
    return MetricReport(
        "dci_disentanglement", score, seed=seed,
        sizes={"n": len(reps), "trees": n_trees, "max_depth": max_depth},
        aux={"importance": r, "per_dim": per_dim, "completeness": completeness,
             "informativeness": float(np.mean(accuracy)), "factors_used": kept})
