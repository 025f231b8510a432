"""The six regularized-VAE objectives and their total-correlation estimators.

All objectives are written as ``recon + kl_term + regularizer`` on autodiff
nodes. ``recon`` and ``kl`` are batch means, so every term is per-sample.
"""

from dataclasses import dataclass, fields
import math

import numpy as np

from untangle.autodiff import LOG_2PI, Graph, ParamSet, adam_step

METHODS = ("beta_vae", "annealed_vae", "factor_vae", "beta_tcvae", "dip_vae_i", "dip_vae_ii")

METHOD_FIELDS = {
    "beta_vae": ("beta",),
    "annealed_vae": ("gamma", "c_max", "anneal_steps"),
    "factor_vae": ("gamma_tc",),
    "beta_tcvae": ("beta",),
    "dip_vae_i": ("lambda_od", "lambda_d"),
    "dip_vae_ii": ("lambda_od", "lambda_d"),
}

# hyperparameter reported as "regularization strength" for each method
STRENGTH_FIELD = {
    "beta_vae": "beta",
    "annealed_vae": "c_max",
    "factor_vae": "gamma_tc",
    "beta_tcvae": "beta",
    "dip_vae_i": "lambda_od",
    "dip_vae_ii": "lambda_od",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveConfig:
    method: str
    beta: float = None
    gamma: float = None
    c_max: float = None
    anneal_steps: int = None
    gamma_tc: float = None
    lambda_od: float = None
    lambda_d: float = None

    def __post_init__(self):
        if self.method not in METHOD_FIELDS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        wanted = set(METHOD_FIELDS[self.method])
        for f in fields(self):
            if f.name == "method":
                continue
            value = getattr(self, f.name)
            if f.name in wanted:
                if value is None:
                    raise ConfigError(f"{self.method} requires {f.name}")
                if not math.isfinite(value) or value < 0:
                    raise ConfigError(f"{f.name} must be finite and >= 0, got {value}")
            elif value is not None:
                raise ConfigError(f"{self.method} does not take {f.name}")
        if self.anneal_steps is not None and int(self.anneal_steps) != self.anneal_steps:
            raise ConfigError("anneal_steps must be an integer")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown objective keys: {sorted(unknown)}")
        if "method" not in data:
            raise ConfigError("objective config needs a 'method'")
        return cls(**data)

    def to_dict(self):
        out = {"method": self.method}
        for name in METHOD_FIELDS[self.method]:
            out[name] = getattr(self, name)
        return out

    @property
    def strength(self):
        name = STRENGTH_FIELD[self.method]
        return name, float(getattr(self, name))


def default_sweep(method, steps):
    """Six regularization strengths per method, under- to over-regularized."""
    if method == "beta_vae":
        return [ObjectiveConfig(method, beta=b) for b in (1.0, 2.0, 4.0, 6.0, 8.0, 16.0)]
    if method == "beta_tcvae":
        return [ObjectiveConfig(method, beta=b) for b in (1.0, 2.0, 4.0, 6.0, 8.0, 10.0)]
    if method == "factor_vae":
        return [ObjectiveConfig(method, gamma_tc=g) for g in (10.0, 20.0, 30.0, 40.0, 50.0, 100.0)]
    if method == "dip_vae_i":
        return [ObjectiveConfig(method, lambda_od=v, lambda_d=10.0 * v)
                for v in (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)]
    if method == "dip_vae_ii":
        return [ObjectiveConfig(method, lambda_od=v, lambda_d=v)
                for v in (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)]
    if method == "annealed_vae":
        return [ObjectiveConfig(method, gamma=1000.0, c_max=c, anneal_steps=int(0.9 * steps))
                for c in (5.0, 10.0, 25.0, 50.0, 75.0, 100.0)]
    raise ConfigError(f"unknown method {method!r}")


def with_strength(method, value, steps):
    """Config for ``method`` at strength ``value``, other fields as in the sweep."""
    value = float(value)
    if method == "dip_vae_i":
        return ObjectiveConfig(method, lambda_od=value, lambda_d=10.0 * value)
    if method == "dip_vae_ii":
        return ObjectiveConfig(method, lambda_od=value, lambda_d=value)
    if method == "annealed_vae":
        return ObjectiveConfig(method, gamma=1000.0, c_max=value, anneal_steps=int(0.9 * steps))
    return ObjectiveConfig(method, **{STRENGTH_FIELD[method]: value})


def annealed_capacity(config, step):
    if config.anneal_steps <= 0:
        return float(config.c_max)
    return float(config.c_max) * min(step / config.anneal_steps, 1.0)


# --------------------------------------------------------------------------
# total correlation estimators


def mws_tc_graph(g, z, mu, log_var):
    """Minibatch estimate of TC(q(z)) as a single graph node.

    The aggregate density at each sample is the batch average of the encoder
    densities, ``log q(z_i) = logsumexp_j log q(z_i | x_j) - log M``, and the
    same for every marginal. The gradient is computed in closed form.
    """
    m, d = z.shape
    zv, mv, lv = z.value, mu.value, log_var.value
    inv_var = np.exp(-lv)[None, :, :]                      # (1, M, D)
    diff = zv[:, None, :] - mv[None, :, :]                # (M, M, D), [i, j, k]
    log_density = -0.5 * (diff * diff * inv_var + lv[None, :, :] + LOG_2PI)
    joint = log_density.sum(axis=2)
    w_joint = _softmax(joint, axis=1)                     # (M, M)
    w_marg = _softmax(log_density, axis=1)                # (M, M, D)
    lse_joint = _logsumexp(joint, axis=1)
    lse_marg = _logsumexp(log_density, axis=1).sum(axis=1)
    value = np.mean(lse_joint - lse_marg) + (d - 1) * math.log(m)

    def backward(grad):
        coef = grad[0, 0] * (w_joint[:, :, None] - w_marg) / m
        scaled = coef * diff * inv_var
        g._accumulate(z, -scaled.sum(axis=1))
        g._accumulate(mu, scaled.sum(axis=0))
        g._accumulate(log_var, (coef * (0.5 * diff * diff * inv_var - 0.5)).sum(axis=0))

    return g._push(np.array([[value]]), "mws_tc", (z, mu, log_var), backward)


def _logsumexp(a, axis):
    top = a.max(axis=axis, keepdims=True)
    return np.squeeze(top, axis) + np.log(np.exp(a - top).sum(axis=axis))


def _softmax(a, axis):
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def mws_total_correlation(z, mu, log_var, chunk=512):
    """Numpy version of :func:`mws_tc_graph`, chunked for large samples."""
    z = np.asarray(z, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    m, d = z.shape
    log_m = math.log(m)
    inv_var = np.exp(-log_var)
    total = 0.0
    for start in range(0, m, chunk):
        zc = z[start:start + chunk]
        joint = np.zeros((zc.shape[0], m))
        marginals = np.zeros(zc.shape[0])
        for k in range(d):
            diff = zc[:, k:k + 1] - mu[None, :, k]
            log_density = -0.5 * (diff * diff * inv_var[None, :, k] + log_var[None, :, k] + LOG_2PI)
            marginals += _logsumexp_rows(log_density)
            joint += log_density
        total += np.sum(_logsumexp_rows(joint) - log_m - (marginals - d * log_m))
    return total / m


def _logsumexp_rows(a):
    top = a.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(a - top).sum(axis=1, keepdims=True)))[:, 0]


def gaussian_total_correlation(codes, ridge=1e-6):
    """TC of a Gaussian fitted to ``codes``: 0.5 (sum log diag S - log det S)."""
    codes = np.asarray(codes, dtype=np.float64)
    # canonical column order makes the value bit-identical under dim permutations
    codes = codes[:, np.lexsort(codes[::-1])]
    cov = np.cov(codes, rowvar=False, bias=True).reshape(codes.shape[1], codes.shape[1])
    cov = cov + ridge * np.eye(cov.shape[0])
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or not np.isfinite(logdet):
        raise np.linalg.LinAlgError("covariance is singular after ridge regularization")
    return 0.5 * (np.sum(np.log(np.diag(cov))) - logdet)


# --------------------------------------------------------------------------
# FactorVAE discriminator


def init_discriminator(latent_dim, rng, hidden=256):
    sizes = [latent_dim, hidden, hidden, 2]
    values = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        values[f"W{i}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        values[f"b{i}"] = np.zeros((1, fan_out))
    return ParamSet(values)


def discriminator_logits(g, nodes, codes):
    h = g.relu(g.affine(codes, nodes["W0"], nodes["b0"]))
    h = g.relu(g.affine(h, nodes["W1"], nodes["b1"]))
    return g.affine(h, nodes["W2"], nodes["b2"])


def frozen_nodes(g, params):
    """Parameters as constants, so gradients flow through but not into them."""
    return {k: g.constant(v) for k, v in params.values.items()}


def logit_gap(g, logits):
    """Per-sample ``logit_real - logit_shuffled``: the log density-ratio estimate."""
    return g.cols(logits, 0) - g.cols(logits, 1)


def permute_dims(codes, rng):
    """Permute every column independently: a sample from the product of marginals."""
    codes = np.asarray(codes)
    out = np.empty_like(codes)
    for k in range(codes.shape[1]):
        out[:, k] = codes[rng.permutation(codes.shape[0]), k]
    return out


def discriminator_step(disc, codes, rng, lr=1e-4):
    """One cross-entropy Adam step on real vs. dimension-shuffled codes.

    The first half of ``codes`` is kept as the real sample, the second half is
    shuffled per dimension. Returns ``(disc, tc_estimate)`` where the estimate
    is the mean logit gap on the real half, measured before the update.
    """
    codes = np.asarray(codes, dtype=np.float64)
    n = codes.shape[0]
    if n < 4:
        raise ValueError(f"discriminator needs at least 4 codes, got {n}")
    if n % 2:
        raise ValueError(f"discriminator needs an even number of codes, got {n}")
    half = n // 2
    real = codes[:half]
    shuffled = permute_dims(codes[half:], rng)

    g = Graph()
    nodes = disc.bind(g)
    gap_real = logit_gap(g, discriminator_logits(g, nodes, g.constant(real)))
    gap_fake = logit_gap(g, discriminator_logits(g, nodes, g.constant(shuffled)))
    # class 0 = real, class 1 = shuffled; two-class cross-entropy in softplus form
    loss = (g.mean(g.softplus(-gap_real)) + g.mean(g.softplus(gap_fake))) * 0.5
    grads = g.backward(loss)
    adam_step(disc, grads, lr=lr)
    return disc, float(gap_real.value.mean())


def discriminator_tc(disc, codes):
    """Mean logit gap of ``disc`` on ``codes`` (no update)."""
    g = Graph()
    gap = logit_gap(g, discriminator_logits(g, frozen_nodes(g, disc), g.constant(codes)))
    return float(gap.value.mean())


# --------------------------------------------------------------------------
# objectives


def covariance(g, x):
    centered = x - g.mean(x, axis=0)
    return g.matmul(g.transpose(centered), centered) * (1.0 / x.shape[0])


def dip_penalty(g, cov, lambda_od, lambda_d):
    d = cov.shape[0]
    eye = np.eye(d)
    off = g.sum(g.square(cov * (1.0 - eye)))
    diag = g.sum(cov * eye, axis=0)  # (1, d)
    on = g.sum(g.square(diag - 1.0))
    return off * lambda_od + on * lambda_d


def objective_loss(g, config, recon, kl, mu, log_var, z, step, disc=None):
    """Total loss node plus a diagnostics dict for one minibatch.

    ``recon`` and ``kl`` are the batch-mean reconstruction and KL nodes;
    ``mu``, ``log_var`` and ``z`` are the per-sample encoder outputs and
    reparameterized samples. ``disc`` is the FactorVAE discriminator.
    """
    if mu.shape[0] < 2:
        raise ValueError("objectives need a batch of at least 2")
    method = config.method
    diag = {}
    if method == "beta_vae":
        reg = kl * (config.beta - 1.0)
        loss = recon + kl * config.beta
    elif method == "annealed_vae":
        capacity = annealed_capacity(config, step)
        reg = g.abs(kl - capacity) * config.gamma
        loss = recon + reg
        diag["capacity"] = capacity
    elif method == "factor_vae":
        if disc is None:
            raise ValueError("factor_vae needs a discriminator")
        logits = discriminator_logits(g, frozen_nodes(g, disc), z)
        tc = g.mean(logit_gap(g, logits))
        reg = tc * config.gamma_tc
        loss = recon + kl + reg
        diag["tc"] = float(tc.value[0, 0])
    elif method == "beta_tcvae":
        tc = mws_tc_graph(g, z, mu, log_var)
        reg = tc * (config.beta - 1.0)
        loss = recon + kl + reg
        diag["tc"] = float(tc.value[0, 0])
    elif method in ("dip_vae_i", "dip_vae_ii"):
        cov = covariance(g, mu)
        if method == "dip_vae_ii":
            cov = cov + g.mean(g.exp(log_var), axis=0) * np.eye(mu.shape[1])
        reg = dip_penalty(g, cov, config.lambda_od, config.lambda_d)
        loss = recon + kl + reg
    else:
        raise ConfigError(f"unknown method {method!r}")
    diag.update(recon=float(recon.value[0, 0]), kl=float(kl.value[0, 0]),
                reg=float(reg.value[0, 0]), loss=float(loss.value[0, 0]))
    return loss, diag
