"""Scores that need no ground truth: reconstruction, KL, ELBO and Gaussian TC."""

import numpy as np

from untangle import rng as rng_mod
from untangle.methods import gaussian_total_correlation
from untangle.training import encode, evaluate_elbo
from untangle.worlds import draw_factors, render

MIN_SAMPLES = 1000


def unsupervised_scores(checkpoint, world, n=10000, seed=0, chunk=4096):
    """Mean reconstruction, KL, ELBO and Gaussian-fit TC on ``n`` fresh samples.

    Raises ``numpy.linalg.LinAlgError`` when the code covariance is singular
    even after the ridge.
    """
    if n < MIN_SAMPLES:
        raise ValueError(f"unsupervised scores need n >= {MIN_SAMPLES}, got {n}")
    rng = rng_mod.make_rng(seed, rng_mod.STREAM_METRIC)
    factors = draw_factors(world.space, n, rng)
    recon = kl = 0.0
    codes = []
    for start in range(0, n, chunk):
        obs = render(world, factors[start:start + chunk])
        r, k = evaluate_elbo(checkpoint, obs, rng)
        recon += r * obs.shape[0]
        kl += k * obs.shape[0]
        codes.append(encode(checkpoint, obs))
    recon /= n
    kl /= n
    tc = gaussian_total_correlation(np.concatenate(codes))
    return {"recon": recon, "kl": kl, "elbo": -(recon + kl), "gaussian_tc": float(tc)}
