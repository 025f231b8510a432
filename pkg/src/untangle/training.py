"""MLP encoder/decoder, the training loop, checkpoints and encoding."""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from untangle import rng as rng_mod
from untangle import tensorio
from untangle.autodiff import Graph, ParamSet, adam_step
from untangle.methods import (ObjectiveConfig, discriminator_step, init_discriminator,
                              objective_loss)
from untangle.worlds import BatchRenderer, draw_factors, render

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8
HISTORY_KEYS = ("recon", "kl", "reg", "loss")


class TrainingDiverged(RuntimeError):
    def __init__(self, step, diagnostics):
        super().__init__(f"loss diverged at step {step}: {diagnostics}")
        self.step = step
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    latent_dim: int = 10
    hidden: tuple = (256, 128)
    disc_lr: float = 1e-4
    log_every: int = 100

    def to_dict(self):
        return {"batch_size": self.batch_size, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps, "latent_dim": self.latent_dim,
                "hidden": list(self.hidden), "disc_lr": self.disc_lr,
                "log_every": self.log_every}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(int(h) for h in data["hidden"])
        return cls(**data)


@dataclass
class Checkpoint:
    params: ParamSet
    config: ObjectiveConfig
    arch: dict
    world: dict
    world_hash: str
    history: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    seed: int = 0
    disc: ParamSet = None

    @property
    def steps(self):
        return len(self.history.get("loss", ()))

    @property
    def latent_dim(self):
        return self.arch["latent_dim"]


# --------------------------------------------------------------------------
# networks


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def layer_sizes(n_pixels, hidden, latent_dim):
    enc = [n_pixels, *hidden]
    dec = [latent_dim, *reversed(hidden), n_pixels]
    return enc, dec


def init_vae(n_pixels, latent_dim=10, hidden=(256, 128), seed=0):
    rng = rng_mod.make_rng(seed, rng_mod.STREAM_INIT)
    enc, dec = layer_sizes(n_pixels, hidden, latent_dim)
    values = {}
    for i, (a, b) in enumerate(zip(enc[:-1], enc[1:])):
        values[f"enc_W{i}"] = _glorot(rng, a, b)
        values[f"enc_b{i}"] = np.zeros((1, b))
    values["enc_Wmu"] = _glorot(rng, enc[-1], latent_dim)
    values["enc_bmu"] = np.zeros((1, latent_dim))
    values["enc_Wlv"] = _glorot(rng, enc[-1], latent_dim)
    values["enc_blv"] = np.zeros((1, latent_dim))
    for i, (a, b) in enumerate(zip(dec[:-1], dec[1:])):
        values[f"dec_W{i}"] = _glorot(rng, a, b)
        values[f"dec_b{i}"] = np.zeros((1, b))
    return ParamSet(values)


def encoder_graph(g, p, x, depth):
    h = x
    for i in range(depth):
        h = g.tanh(g.affine(h, p[f"enc_W{i}"], p[f"enc_b{i}"]))
    return g.affine(h, p["enc_Wmu"], p["enc_bmu"]), g.affine(h, p["enc_Wlv"], p["enc_blv"])


def decoder_graph(g, p, z, depth):
    h = z
    for i in range(depth):
        h = g.tanh(g.affine(h, p[f"dec_W{i}"], p[f"dec_b{i}"]))
    return g.affine(h, p[f"dec_W{depth}"], p[f"dec_b{depth}"])


def encoder_forward(params, x, depth):
    h = np.asarray(x, dtype=np.float64)
    for i in range(depth):
        h = np.tanh(h @ params[f"enc_W{i}"] + params[f"enc_b{i}"])
    return h @ params["enc_Wmu"] + params["enc_bmu"], h @ params["enc_Wlv"] + params["enc_blv"]


def decoder_forward(params, z, depth):
    h = z
    for i in range(depth):
        h = np.tanh(h @ params[f"dec_W{i}"] + params[f"dec_b{i}"])
    return h @ params[f"dec_W{depth}"] + params[f"dec_b{depth}"]


# --------------------------------------------------------------------------
# training


def train(world, config, steps, seed, settings=None, progress=None):
    """Train one model; deterministic given ``(world, config, steps, seed, settings)``.

    The returned checkpoint keeps one history entry per step. For FactorVAE
    every VAE update is followed by one discriminator update on the same
    batch's sampled codes.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    settings = settings or TrainSettings()
    if settings.batch_size < 2 or (config.method == "factor_vae" and settings.batch_size < 4):
        raise ValueError(f"batch size {settings.batch_size} too small for {config.method}")
    depth = len(settings.hidden)
    params = init_vae(world.n_pixels, settings.latent_dim, settings.hidden, seed)
    batch_rng = rng_mod.make_rng(seed, rng_mod.STREAM_BATCHES)
    noise_rng = rng_mod.make_rng(seed, rng_mod.STREAM_NOISE)
    disc = disc_rng = None
    if config.method == "factor_vae":
        disc_rng = rng_mod.make_rng(seed, rng_mod.STREAM_DISC)
        disc = init_discriminator(settings.latent_dim, disc_rng)

    batch_images = BatchRenderer(world)
    history = {k: np.zeros(steps) for k in HISTORY_KEYS}
    for step in range(steps):
        factors = draw_factors(world.space, settings.batch_size, batch_rng)
        x = batch_images(factors)
        noise = noise_rng.standard_normal((settings.batch_size, settings.latent_dim))

        g = Graph()
        p = params.bind(g)
        mu, log_var = encoder_graph(g, p, g.constant(x), depth)
        z = g.gaussian_reparameterize(mu, log_var, noise)
        logits = decoder_graph(g, p, z, depth)
        recon = g.bernoulli_recon(logits, x)
        kl = g.gaussian_kl_to_standard(mu, log_var)
        loss, diag = objective_loss(g, config, recon, kl, mu, log_var, z, step, disc)
        if not math.isfinite(diag["loss"]) or abs(diag["loss"]) > DIVERGENCE_LIMIT:
            raise TrainingDiverged(step, diag)
        grads = g.backward(loss)
        adam_step(params, grads, settings.lr, settings.beta1, settings.beta2, settings.eps)
        if disc is not None:
            discriminator_step(disc, z.value, disc_rng, lr=settings.disc_lr)

        for k in HISTORY_KEYS:
            history[k][step] = diag[k]
        if settings.log_every and (step + 1) % settings.log_every == 0:
            log.debug("step %d recon %.3f kl %.3f reg %.3f", step + 1,
                      diag["recon"], diag["kl"], diag["reg"])
            if progress is not None:
                progress(step + 1, diag)

    return Checkpoint(
        params=params,
        config=config,
        arch={"n_pixels": world.n_pixels, "latent_dim": settings.latent_dim,
              "hidden": list(settings.hidden)},
        world=world.manifest(),
        world_hash=world.manifest_hash(),
        history=history,
        settings=settings.to_dict(),
        seed=int(seed),
        disc=disc,
    )


def encode(checkpoint, observations, chunk=8192):
    """Encoder means for a batch of observations (no sampling)."""
    observations = np.asarray(observations)
    if observations.ndim != 2 or observations.shape[1] != checkpoint.arch["n_pixels"]:
        raise ValueError(f"observations of shape {observations.shape} do not match "
                         f"encoder input width {checkpoint.arch['n_pixels']}")
    depth = len(checkpoint.arch["hidden"])
    out = np.zeros((observations.shape[0], checkpoint.latent_dim))
    for start in range(0, observations.shape[0], chunk):
        mu, _ = encoder_forward(checkpoint.params, observations[start:start + chunk], depth)
        out[start:start + chunk] = mu
    return out


def evaluate_elbo(checkpoint, observations, rng):
    """Mean per-sample reconstruction and KL with one posterior sample each."""
    depth = len(checkpoint.arch["hidden"])
    mu, log_var = encoder_forward(checkpoint.params, observations, depth)
    z = mu + np.exp(0.5 * log_var) * rng.standard_normal(mu.shape)
    logits = decoder_forward(checkpoint.params, z, depth)
    x = np.asarray(observations, dtype=np.float64)
    recon = np.sum(np.logaddexp(0.0, logits) - x * logits) / x.shape[0]
    kl = 0.5 * np.sum(np.exp(log_var) + mu * mu - 1.0 - log_var) / x.shape[0]
    return float(recon), float(kl)


def grid_codes(world, checkpoint, grid, chunk=4096):
    """Encode every row of ``grid`` (rendering on the fly in chunks)."""
    out = np.zeros((grid.shape[0], checkpoint.latent_dim))
    for start in range(0, grid.shape[0], chunk):
        out[start:start + chunk] = encode(checkpoint, render(world, grid[start:start + chunk]))
    return out


# --------------------------------------------------------------------------
# persistence


def save_checkpoint(path, checkpoint):
    tensors = {f"vae/{k}": v for k, v in checkpoint.params.values.items()}
    if checkpoint.disc is not None:
        tensors.update({f"disc/{k}": v for k, v in checkpoint.disc.values.items()})
    for k, v in checkpoint.history.items():
        tensors[f"history/{k}"] = np.asarray(v, dtype=np.float32)
    header = {
        "format": "untangle-checkpoint",
        "objective": checkpoint.config.to_dict(),
        "arch": checkpoint.arch,
        "world": checkpoint.world,
        "world_hash": checkpoint.world_hash,
        "settings": checkpoint.settings,
        "seed": checkpoint.seed,
        "steps": checkpoint.steps,
    }
    tensorio.save_bundle(path, header, tensors)


def load_checkpoint(path):
    header, tensors = tensorio.load_bundle(path)
    groups = {"vae": {}, "disc": {}, "history": {}}
    for name, value in tensors.items():
        group, key = name.split("/", 1)
        groups[group][key] = value
    params = ParamSet({k: v.astype(np.float64) for k, v in groups["vae"].items()})
    disc = None
    if groups["disc"]:
        disc = ParamSet({k: v.astype(np.float64) for k, v in groups["disc"].items()})
    return Checkpoint(
        params=params,
        config=ObjectiveConfig.from_dict(header["objective"]),
        arch=header["arch"],
        world=header["world"],
        world_hash=header["world_hash"],
        history={k: v.astype(np.float64) for k, v in groups["history"].items()},
        settings=header["settings"],
        seed=header["seed"],
        disc=disc,
    )
