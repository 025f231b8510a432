"""BetaVAE and FactorVAE scores: predict which factor was held fixed.

Both take a *representation function* mapping a factor matrix to codes
(usually render-then-encode, see :mod:`untangle.metrics.representations`).
"""

import warnings

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression

from untangle import rng as rng_mod
from untangle.metrics.report import MetricReport, UndefinedMetric
from untangle.worlds import draw_factors

COLLAPSE_THRESHOLD = 0.05


def _space(world):
    return getattr(world, "space", world)


def _free_factors(space):
    free = [j for j, c in enumerate(space.cardinalities) if c > 1]
    if not free:
        raise UndefinedMetric("no factor with more than one value")
    return np.array(free)


def _pair_features(space, represent, fixed, batch_size, rng, chunk=256):
    """Mean |r(x1) - r(x2)| over ``batch_size`` pairs sharing factor ``fixed[p]``."""
    out = []
    for start in range(0, fixed.size, chunk):
        idx = fixed[start:start + chunk]
        m = idx.size * batch_size
        first = draw_factors(space, m, rng)
        second = draw_factors(space, m, rng)
        rows = np.arange(m)
        cols = np.repeat(idx, batch_size)
        second[rows, cols] = first[rows, cols]
        diff = np.abs(represent(first) - represent(second))
        out.append(diff.reshape(idx.size, batch_size, -1).mean(axis=1))
    return np.concatenate(out, axis=0)


def beta_vae_score(world, represent, seed=0, batch_size=64, n_train=10000, n_test=5000):
    """Accuracy of a multinomial logistic regression predicting the fixed factor."""
    space = _space(world)
    free = _free_factors(space)
    rng = rng_mod.make_rng(seed, rng_mod.STREAM_METRIC)
    y_train = rng.choice(free, size=n_train)
    x_train = _pair_features(space, represent, y_train, batch_size, rng)
    y_test = rng.choice(free, size=n_test)
    x_test = _pair_features(space, represent, y_test, batch_size, rng)

    if np.unique(y_train).size < 2:
        # a single free factor: the label is always the same
        predict = lambda x: np.full(x.shape[0], y_train[0])  # noqa: E731
    else:
        model = LogisticRegression(C=1e3, max_iter=2000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            model.fit(x_train, y_train)
        predict = model.predict
    accuracy = float(np.mean(predict(x_test) == y_test))
    train_accuracy = float(np.mean(predict(x_train) == y_train))
    return MetricReport("beta_vae", accuracy, seed=seed,
                        sizes={"n_train": n_train, "n_test": n_test, "batch_size": batch_size},
                        aux={"train_accuracy": train_accuracy})


def _votes(space, represent, fixed, batch_size, scale, active, rng, chunk=256):
    """Index (within ``active``) of the least-varying normalized dim per batch."""
    out = []
    for start in range(0, fixed.size, chunk):
        idx = fixed[start:start + chunk]
        m = idx.size * batch_size
        factors = draw_factors(space, m, rng)
        # every batch shares one value of its fixed factor
        values = np.array([rng.integers(0, space.cardinalities[j]) for j in idx])
        factors[np.arange(m), np.repeat(idx, batch_size)] = np.repeat(values, batch_size)
        codes = represent(factors)[:, active] / scale
        var = codes.reshape(idx.size, batch_size, -1).var(axis=1, ddof=1)
        out.append(np.argmin(var, axis=1))
    return np.concatenate(out)


def factor_vae_score(world, represent, seed=0, batch_size=64, n_train=10000, n_test=5000,
                     n_variance=10000, threshold=COLLAPSE_THRESHOLD):
    """Majority-vote classifier from least-variance dimension to fixed factor."""
    space = _space(world)
    free = _free_factors(space)
    rng = rng_mod.make_rng(seed, rng_mod.STREAM_METRIC)
    codes = represent(draw_factors(space, n_variance, rng))
    variances = codes.var(axis=0, ddof=1)
    active = np.nonzero(variances >= threshold)[0]
    sizes = {"n_train": n_train, "n_test": n_test, "batch_size": batch_size,
             "n_variance": n_variance}
    if active.size == 0:
        return MetricReport("factor_vae", 0.0, seed=seed, sizes=sizes,
                            flags={"collapsed": True}, aux={"active_dims": []})
    scale = np.sqrt(variances[active])

    y_train = rng.choice(free, size=n_train)
    v_train = _votes(space, represent, y_train, batch_size, scale, active, rng)
    table = np.zeros((active.size, space.k), dtype=np.int64)
    np.add.at(table, (v_train, y_train), 1)
    majority = np.argmax(table, axis=1)  # ties -> lowest factor index

    y_test = rng.choice(free, size=n_test)
    v_test = _votes(space, represent, y_test, batch_size, scale, active, rng)
    accuracy = float(np.mean(majority[v_test] == y_test))
    return MetricReport("factor_vae", accuracy, seed=seed, sizes=sizes,
                        flags={"collapsed": False},
                        aux={"active_dims": active.tolist(), "votes": table})
