"""SAP score: gap between the two most predictive single code dimensions."""

import numpy as np

from untangle import rng as rng_mod
from untangle.metrics.dci import MIN_TEST, MIN_TRAIN, split_train_test
from untangle.metrics.report import MetricReport, UndefinedMetric


def univariate_r2(x_train, y_train, x_test, y_test):
    """Held-out R^2 of ``y ~ a + b x`` fitted on the training split, clamped at 0."""
    sst = np.sum((y_test - y_test.mean()) ** 2)
    if sst <= 0:
        return 0.0
    xc = x_train - x_train.mean()
    var = np.sum(xc * xc)
    slope = np.sum(xc * (y_train - y_train.mean())) / var if var > 0 else 0.0
    intercept = y_train.mean() - slope * x_train.mean()
    sse = np.sum((y_test - intercept - slope * x_test) ** 2)
    return max(0.0, 1.0 - sse / sst)


def sap_from_matrix(scores):
    """Mean over factors of (top - second) down each column of a (d, k) matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    ordered = np.sort(scores, axis=0)[::-1]
    second = ordered[1] if ordered.shape[0] > 1 else np.zeros(ordered.shape[1])
    gaps = ordered[0] - second
    return float(np.mean(gaps)), gaps


def sap_score(reps, factors, seed=0, cardinalities=None):
    """SAP from held-out univariate R^2 of each code dim for each factor.

    Factors are regressed as normalized values ``v / (cardinality - 1)``;
    ``cardinalities`` defaults to the observed ``max + 1`` per factor.
    """
    reps = np.asarray(reps, dtype=np.float64)
    factors = np.asarray(factors, dtype=np.int64)
    n = reps.shape[0]
    if n != factors.shape[0]:
        raise ValueError(f"reps have {n} rows, factors {factors.shape[0]}")
    if n < MIN_TRAIN + MIN_TEST:
        raise ValueError(f"SAP needs at least {MIN_TRAIN + MIN_TEST} samples, got {n}")
    if cardinalities is None:
        cardinalities = factors.max(axis=0) + 1
    kept = [j for j in range(factors.shape[1]) if np.unique(factors[:, j]).size > 1]
    if not kept:
        raise UndefinedMetric("SAP undefined: every factor is constant")
    rng = rng_mod.make_rng(seed, rng_mod.STREAM_METRIC)
    train, test = split_train_test(n, rng)
    matrix = np.zeros((reps.shape[1], len(kept)))
    for col, j in enumerate(kept):
        y = factors[:, j] / max(cardinalities[j] - 1, 1)
        for i in range(reps.shape[1]):
            matrix[i, col] = univariate_r2(reps[train, i], y[train], reps[test, i], y[test])
    score, gaps = sap_from_matrix(matrix)
    return MetricReport("sap", score, seed=seed, sizes={"n_train": train.size, "n_test": test.size},
                        aux={"r2": matrix, "gaps": gaps, "factors_used": kept})
