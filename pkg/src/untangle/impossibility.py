"""Two generative models with the same P(x) whose latents are entangled.

World A draws ``z ~ N(0, I)`` and decodes ``x = g(z)``.  World B uses
``z_hat = R z`` and decodes ``x = g(R^T z_hat)``.  Both push the same
Gaussian to the same observations, so nothing in ``x`` tells them apart,
yet a code aligned with ``z`` is entangled with ``z_hat``.
"""

from dataclasses import dataclass
import itertools
import math

import numpy as np

from untangle import rng as rng_mod
from untangle.metrics.information import discretize, mig

# latents live on a 2^-20 grid; R^T R z lands within ~1e-15 of a grid point,
# so rounding recovers z exactly and the two worlds agree bit for bit
QUANTUM = 2.0 ** -20
FACTOR_BINS = 10
CODE_BINS = 20
MIN_SAMPLES = 10**4


def quantize(values):
    return np.round(np.asarray(values, dtype=np.float64) / QUANTUM) * QUANTUM


@dataclass(frozen=True)
class RotationMap:
    matrix: np.ndarray
    angles: tuple  # ((i, j, theta), ...) in application order

    @property
    def d(self):
        return self.matrix.shape[0]

    def orthogonality_error(self):
        return float(np.max(np.abs(self.matrix.T @ self.matrix - np.eye(self.d))))


def givens(d, i, j, theta):
    g = np.eye(d)
    c, s = math.cos(theta), math.sin(theta)
    g[i, i] = g[j, j] = c
    g[i, j] = -s
    g[j, i] = s
    return g


def make_rotation(d, seed=0, angles=None):
    """Product of Givens rotations over every coordinate pair.

    Angles are uniform in [pi/8, 3pi/8] unless given explicitly (one per pair,
    pairs in lexicographic order).
    """
    if d < 2:
        raise ValueError(f"rotation needs d >= 2, got {d}")
    pairs = list(itertools.combinations(range(d), 2))
    if angles is None:
        gen = rng_mod.make_rng(seed, rng_mod.STREAM_IMPOSSIBILITY)
        angles = gen.uniform(math.pi / 8, 3 * math.pi / 8, size=len(pairs))
    angles = [float(a) for a in np.atleast_1d(angles)]
    if len(angles) != len(pairs):
        raise ValueError(f"expected {len(pairs)} angles for d={d}, got {len(angles)}")
    matrix = np.eye(d)
    for (i, j), theta in zip(pairs, angles):
        matrix = givens(d, i, j, theta) @ matrix
    log = tuple((i, j, theta) for (i, j), theta in zip(pairs, angles))
    return RotationMap(matrix, log)


@dataclass(frozen=True)
class ToyDecoder:
    """Seeded two-layer tanh network ``x = [h, tanh(h W2 + b2)]``, ``h = tanh(z W1 + b1)``.

    The first layer is square and well conditioned and ``h`` is part of the
    observation, so the decoder is injective and ``invert`` recovers ``z``.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def random(cls, d, seed=0, width=16, gain=0.4):
        gen = rng_mod.make_rng(seed, rng_mod.STREAM_IMPOSSIBILITY + 100)
        q, _ = np.linalg.qr(gen.standard_normal((d, d)))
        w1 = gain * q
        b1 = gen.uniform(-0.1, 0.1, size=d)
        w2 = gen.standard_normal((d, width)) / math.sqrt(d)
        b2 = gen.uniform(-0.1, 0.1, size=width)
        return cls(w1, b1, w2, b2)

    @property
    def d(self):
        return self.w1.shape[0]

    def __call__(self, z):
        h = np.tanh(quantize(z) @ self.w1 + self.b1)
        return np.concatenate([h, np.tanh(h @ self.w2 + self.b2)], axis=1)

    def invert(self, x):
        h = np.asarray(x)[:, :self.d]
        return np.linalg.solve(self.w1.T, (np.arctanh(h) - self.b1).T).T


@dataclass(frozen=True)
class TwinWorlds:
    rotation: RotationMap
    decoder: ToyDecoder

    @property
    def d(self):
        return self.rotation.d

    def decode_a(self, z):
        return self.decoder(z)

    def decode_b(self, z_hat):
        return self.decoder(z_hat @ self.rotation.matrix)  # rows: R^T z_hat

    def sample(self, n, seed):
        """Both worlds driven by one shared base noise."""
        gen = rng_mod.make_rng(seed, rng_mod.STREAM_NOISE)
        z = quantize(gen.standard_normal((n, self.d)))
        z_hat = z @ self.rotation.matrix.T
        return {"z": z, "z_hat": z_hat, "x_a": self.decode_a(z), "x_b": self.decode_b(z_hat)}


def build_twin_worlds(rotation, decoder=None, seed=0):
    if decoder is None:
        decoder = ToyDecoder.random(rotation.d, seed)
    if decoder.d != rotation.d:
        raise ValueError(f"decoder latent width {decoder.d} != rotation size {rotation.d}")
    return TwinWorlds(rotation, decoder)


def identity_representation(twins):
    """Recovers z from x (world A's latents)."""
    return twins.decoder.invert


def rotated_representation(twins):
    """Recovers R z from x (world B's latents)."""
    return lambda x: twins.decoder.invert(x) @ twins.rotation.matrix.T


def _binned(latents):
    return np.stack([discretize(latents[:, j], FACTOR_BINS) for j in range(latents.shape[1])], axis=1)


def moment_check(z_hat):
    cov = np.cov(z_hat, rowvar=False, bias=True)
    return {"mean_max_dev": float(np.max(np.abs(z_hat.mean(axis=0)))),
            "cov_max_dev": float(np.max(np.abs(cov - np.eye(z_hat.shape[1]))))}


def entanglement_report(representation, twins, n=10**5, seed=0, scatter=500):
    """MIG of ``representation`` against both worlds' latents on shared data."""
    if n < MIN_SAMPLES:
        raise ValueError(f"entanglement report needs n >= {MIN_SAMPLES}, got {n}")
    batch = twins.sample(n, seed)
    codes = representation(batch["x_a"])
    mig_a = mig(codes, _binned(batch["z"]), CODE_BINS).score
    mig_b = mig(codes, _binned(batch["z_hat"]), CODE_BINS).score
    return {
        "d": twins.d,
        "n": n,
        "seed": seed,
        "angles": [list(a) for a in twins.rotation.angles],
        "rotation": twins.rotation.matrix.tolist(),
        "orthogonality_error": twins.rotation.orthogonality_error(),
        "determinant": float(np.linalg.det(twins.rotation.matrix)),
        "pushforward_bitwise_equal": bool(np.array_equal(batch["x_a"], batch["x_b"])),
        "moments": moment_check(batch["z_hat"]),
        "mig_a": mig_a,
        "mig_b": mig_b,
        "gap": mig_a - mig_b,
        "scatter": {"z": batch["z"][:scatter].tolist(), "z_hat": batch["z_hat"][:scatter].tolist()},
    }
