"""Disentanglement metrics and unsupervised scores."""

from untangle import rng as rng_mod
from untangle.metrics.classifier import beta_vae_score, factor_vae_score
from untangle.metrics.dci import dci_disentanglement
from untangle.metrics.information import (DEFAULT_BINS, MIMatrix, discretize, discretize_and_mi,
                                          mig, modularity)
from untangle.metrics.report import MetricReport, UndefinedMetric
from untangle.metrics.representations import (checkpoint_representation, constant_representation,
                                               factor_representation, table_representation)
from untangle.metrics.sap import sap_score
from untangle.metrics.unsupervised import unsupervised_scores
from untangle.worlds import draw_factors

METRICS = ("beta_vae", "factor_vae", "mig", "modularity", "dci_disentanglement", "sap")


def evaluate_all(world, represent, seed=0, n=10000, metrics=METRICS, bins=DEFAULT_BINS):
    """Every requested metric for one representation function, keyed by name."""
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    reports = {}
    if {"mig", "modularity", "dci_disentanglement", "sap"} & set(metrics):
        factors = draw_factors(world.space, n, rng_mod.make_rng(seed, rng_mod.STREAM_FACTORS))
        reps = represent(factors)
    for name in metrics:
        if name == "beta_vae":
            reports[name] = beta_vae_score(world, represent, seed)
        elif name == "factor_vae":
            reports[name] = factor_vae_score(world, represent, seed)
        elif name == "mig":
            reports[name] = mig(reps, factors, bins)
        elif name == "modularity":
            reports[name] = modularity(reps, factors, bins)
        elif name == "dci_disentanglement":
            reports[name] = dci_disentanglement(reps, factors, seed)
        else:
            reports[name] = sap_score(reps, factors, seed, world.space.cardinalities)
    return reports


__all__ = [
    "METRICS", "MIMatrix", "MetricReport", "UndefinedMetric", "beta_vae_score",
    "checkpoint_representation", "constant_representation", "dci_disentanglement",
    "discretize", "discretize_and_mi", "evaluate_all", "factor_representation",
    "factor_vae_score", "mig", "modularity", "sap_score", "table_representation",
    "unsupervised_scores",
]
