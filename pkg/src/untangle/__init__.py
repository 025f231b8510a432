"""Regularized-VAE disentanglement: worlds, methods, metrics and studies."""

__version__ = "0.1.0"
