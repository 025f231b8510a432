"""Histogram mutual information, MIG and Modularity."""

from dataclasses import dataclass
import math

import numpy as np

from untangle.metrics.report import MetricReport, UndefinedMetric

DEFAULT_BINS = 20


@dataclass
class MIMatrix:
    mi: np.ndarray             # (d, k) nats
    factor_entropy: np.ndarray  # (k,)
    code_entropy: np.ndarray    # (d,) of the discretized codes


def discretize(values, bins=DEFAULT_BINS):
    """Equal-mass quantile bins per column.

    Bin edges are sample quantiles taken as actual data values, so the binning
    is unchanged by any strictly increasing transform of a column, tied values
    always share a bin and a constant column is a single bin.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0]
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    out = np.zeros(values.shape, dtype=np.int64)
    if n == 0:
        return out
    probs = np.arange(1, bins) / bins
    for i in range(values.shape[1]):
        col = values[:, i]
        edges = np.quantile(col, probs, method="inverted_cdf")
        out[:, i] = np.searchsorted(edges, col, side="left")
    return out


def _relabel(labels):
    return np.unique(labels, return_inverse=True)[1].ravel()


def entropy(labels):
    """Plug-in entropy (nats) of a discrete sample."""
    counts = np.bincount(_relabel(labels))
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def mutual_information(a, b):
    """Plug-in MI (nats) between two discrete samples, 0 log 0 = 0."""
    a = _relabel(a)
    b = _relabel(b)
    nb = b.max() + 1
    joint = np.bincount(a * nb + b)
    p = joint[joint > 0] / a.size
    h_joint = -np.sum(p * np.log(p))
    h_a, h_b = entropy(a), entropy(b)
    mi = h_a + h_b - h_joint
    return float(min(max(mi, 0.0), min(h_a, h_b)))


def discretize_and_mi(reps, factors, bins=DEFAULT_BINS):
    reps = np.asarray(reps, dtype=np.float64)
    factors = np.asarray(factors)
    if reps.shape[0] != factors.shape[0]:
        raise ValueError(f"reps have {reps.shape[0]} rows, factors {factors.shape[0]}")
    if reps.shape[0] < bins:
        raise ValueError(f"need at least {bins} samples for {bins} bins")
    codes = discretize(reps, bins)
    d, k = codes.shape[1], factors.shape[1]
    mi = np.zeros((d, k))
    for i in range(d):
        for j in range(k):
            mi[i, j] = mutual_information(codes[:, i], factors[:, j])
    return MIMatrix(mi=mi,
                    factor_entropy=np.array([entropy(factors[:, j]) for j in range(k)]),
                    code_entropy=np.array([entropy(codes[:, i]) for i in range(d)]))


def mig_from_matrix(m):
    active = m.factor_entropy > 0
    if not active.any():
        raise UndefinedMetric("MIG undefined: every factor is constant")
    top = np.sort(m.mi, axis=0)[::-1]
    second = top[1] if top.shape[0] > 1 else np.zeros(top.shape[1])
    gaps = (top[0] - second)[active] / m.factor_entropy[active]
    return float(np.mean(gaps)), gaps


def mig(reps, factors, bins=DEFAULT_BINS):
    m = discretize_and_mi(reps, factors, bins)
    score, gaps = mig_from_matrix(m)
    return MetricReport("mig", score, sizes={"n": len(reps), "bins": bins},
                        aux={"mi": m.mi, "factor_entropy": m.factor_entropy, "gaps": gaps})


def modularity_from_matrix(mi):
    mi = np.asarray(mi, dtype=np.float64)
    d, k = mi.shape
    if k < 2:
        raise UndefinedMetric("modularity needs at least 2 factors")
    per_dim = np.zeros(d)
    for i in range(d):
        row = mi[i]
        best = int(np.argmax(row))
        theta = row[best]
        if theta <= 0:
            continue
        rest = np.delete(row, best)
        per_dim[i] = 1.0 - np.sum(rest ** 2) / (theta ** 2 * (k - 1))
    return math.fsum(per_dim) / d, per_dim


def modularity(reps, factors, bins=DEFAULT_BINS):
    m = discretize_and_mi(reps, factors, bins)
    score, per_dim = modularity_from_matrix(m.mi)
    return MetricReport("modularity", score, sizes={"n": len(reps), "bins": bins},
                        aux={"mi": m.mi, "per_dim": per_dim})
