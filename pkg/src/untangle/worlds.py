"""Ground-truth factor worlds: factor spaces, a factorized uniform prior and
deterministic procedural renderers.

Two built-in worlds are provided:

``dsprites-lite``
    shape (square, ellipse, heart) x scale x orientation x posX x posY,
    grayscale, 16x16 by default.
``color-dsprites-lite``
    the same sprites with a leading ``color`` factor applied as an RGB tint.

Rendering is binary coverage of pixel centres (no anti-aliasing), so a
grayscale image contains only 0.0 and 1.0.
"""

from dataclasses import dataclass, field
import hashlib
import json
import math

import numpy as np

from untangle import rng as rng_mod

GRID_CAP = 10**6

SHAPES = ("square", "ellipse", "heart")

# RGB tints for the color factor of color-dsprites-lite.
PALETTE = np.array(
    [
        [1.0, 1.0, 1.0],
        [1.0, 0.25, 0.25],
        [0.25, 1.0, 0.25],
        [0.3, 0.45, 1.0],
        [1.0, 0.85, 0.2],
    ]
)


class FactorError(ValueError):
    """Invalid factor space or factor matrix."""


class GridTooLarge(FactorError):
    def __init__(self, required, cap):
        super().__init__(f"factor grid has {required} rows, cap is {cap}")
        self.required = required
        self.cap = cap


@dataclass(frozen=True)
class FactorSpace:
    names: tuple
    cardinalities: tuple

    def __post_init__(self):
        if len(self.names) != len(self.cardinalities):
            raise FactorError("names and cardinalities differ in length")
        if len(self.names) < 2:
            raise FactorError(f"need at least 2 factors, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise FactorError(f"factor names must be unique: {self.names}")
        for name, card in zip(self.names, self.cardinalities):
            if int(card) != card or card < 1:
                raise FactorError(f"factor {name!r} has invalid cardinality {card}")

    @classmethod
    def from_pairs(cls, pairs):
        names, cards = zip(*pairs) if pairs else ((), ())
        return cls(tuple(names), tuple(int(c) for c in cards))

    @property
    def k(self):
        return len(self.names)

    @property
    def grid_size(self):
        return math.prod(self.cardinalities)

    def validate(self, factors):
        factors = np.asarray(factors)
        if factors.ndim != 2 or factors.shape[1] != self.k:
            raise FactorError(
                f"factor matrix must have shape (N, {self.k}), got {factors.shape}")
        if factors.size == 0:
            return factors.astype(np.int64)
        if not np.issubdtype(factors.dtype, np.integer):
            if not np.all(np.mod(factors, 1) == 0):
                raise FactorError("factor matrix must hold integers")
        factors = factors.astype(np.int64)
        upper = np.asarray(self.cardinalities)
        bad = (factors < 0) | (factors >= upper)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise FactorError(
                f"factor index out of range at row {row}, column {col} "
                f"({self.names[col]}={factors[row, col]}, "
                f"cardinality {self.cardinalities[col]})")
        return factors

    def normalize(self, factors):
        """Map integer factor values to [0, 1]; cardinality-1 factors map to 0."""
        factors = np.asarray(factors, dtype=np.float64)
        denom = np.maximum(np.asarray(self.cardinalities, dtype=np.float64) - 1.0, 1.0)
        return factors / denom


@dataclass(frozen=True)
class FactorWorld:
    """A factor space, a uniform factorized prior and a pure renderer."""

    name: str
    space: FactorSpace
    image_shape: tuple  # (H, W, C)
    config: dict = field(compare=False)
    _renderer: object = field(repr=False, compare=False)

    @property
    def n_pixels(self):
        h, w, c = self.image_shape
        return h * w * c

    def manifest(self):
        return {
            "world": dict(self.config),
            "factors": [[n, c] for n, c in zip(self.space.names, self.space.cardinalities)],
            "image_shape": list(self.image_shape),
        }

    def manifest_hash(self):
        blob = json.dumps(self.manifest(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# sampling


def draw_factors(space, n, rng):
    cols = [rng.integers(0, c, size=n) for c in space.cardinalities]
    return np.stack(cols, axis=1).astype(np.int64) if n else np.zeros((0, space.k), np.int64)


def draw_with_fixed(space, fixed_index, n, rng):
    if not 0 <= fixed_index < space.k:
        raise FactorError(f"fixed_index {fixed_index} out of range for k={space.k}")
    value = int(rng.integers(0, space.cardinalities[fixed_index]))
    factors = draw_factors(space, n, rng)
    factors[:, fixed_index] = value
    return factors, value


def _space(world):
    return world.space if isinstance(world, FactorWorld) else world


def sample_factors(world, n, seed):
    if n < 1:
        raise FactorError(f"n must be >= 1, got {n}")
    return draw_factors(_space(world), n, rng_mod.make_rng(seed, rng_mod.STREAM_FACTORS))


def sample_with_factor_fixed(world, fixed_index, n, seed):
    """Sample ``n`` rows sharing one uniformly drawn value of a single factor."""
    gen = rng_mod.make_rng(seed, rng_mod.STREAM_FACTORS)
    return draw_with_fixed(_space(world), fixed_index, n, gen)


def enumerate_grid(world, cap=GRID_CAP):
    space = _space(world)
    total = space.grid_size
    if total > cap:
        raise GridTooLarge(total, cap)
    idx = np.unravel_index(np.arange(total), space.cardinalities)
    return np.stack(idx, axis=1).astype(np.int64)


def grid_index(space, factors):
    """Row of each factor combination in :func:`enumerate_grid` order."""
    factors = np.asarray(factors, dtype=np.int64)
    return np.ravel_multi_index(tuple(factors.T), space.cardinalities)


class BatchRenderer:
    """Renders training batches, from a pre-rendered grid when it is small."""

    def __init__(self, world, max_elements=64 * 10**6):
        self.world = world
        self.images = None
        if world.space.grid_size * world.n_pixels <= max_elements:
            self.images = render(world, enumerate_grid(world))

    def __call__(self, factors):
        if self.images is None:
            return render(self.world, factors)
        return self.images[grid_index(self.world.space, factors)]


def render(world, factors, chunk=4096):
    factors = world.space.validate(factors)
    out = np.empty((factors.shape[0], world.n_pixels), dtype=np.float32)
    for start in range(0, factors.shape[0], chunk):
        stop = start + chunk
        out[start:stop] = world._renderer(factors[start:stop])
    return out


# --------------------------------------------------------------------------
# sprite geometry


def _unit(values, card):
    values = values.astype(np.float64)
    return values / (card - 1) if card > 1 else np.zeros_like(values)


def _sprite_masks(size, shape_idx, scale_u, angle, cx, cy):
    """Binary coverage for a batch of sprites; every argument is a length-N array."""
    centers = np.arange(size, dtype=np.float64) + 0.5
    px = np.tile(centers, size)[None, :]    # column coordinate of each pixel
    py = np.repeat(centers, size)[None, :]  # row coordinate
    dx = px - cx[:, None]
    dy = py - cy[:, None]
    cos = np.cos(angle)[:, None]
    sin = np.sin(angle)[:, None]
    u = cos * dx + sin * dy
    v = -sin * dx + cos * dy
    half = (size * (0.12 + 0.13 * scale_u))[:, None]
    a = u / half
    b = v / half

    mask = np.zeros(a.shape, dtype=bool)
    for idx in np.unique(shape_idx):
        rows = shape_idx == idx
        ar, br = a[rows], b[rows]
        if idx == 0:
            mask[rows] = (np.abs(ar) <= 1.0) & (np.abs(br) <= 1.0)
        elif idx == 1:
            mask[rows] = ar * ar + 4.0 * br * br <= 1.0
        else:
            # heart curve (x^2 + y^2 - 1)^3 - x^2 y^3 <= 0, y pointing up
            hx = 1.15 * ar
            hy = -1.15 * br + 0.1
            mask[rows] = (hx * hx + hy * hy - 1.0) ** 3 - hx * hx * hy ** 3 <= 0.0
    return mask.astype(np.float32)


_ANGLE_PERIOD = np.array([math.pi / 2, math.pi, 2 * math.pi])


def _make_sprite_renderer(size, cards, colored):
    offset = 1 if colored else 0
    c_shape, c_scale, c_orient, c_x, c_y = cards[offset:]

    def renderer(factors):
        shape_idx = factors[:, offset]
        scale_u = _unit(factors[:, offset + 1], c_scale)
        angle = _ANGLE_PERIOD[shape_idx] * factors[:, offset + 2] / c_orient
        cx = size * (0.25 + 0.5 * _unit(factors[:, offset + 3], c_x))
        cy = size * (0.25 + 0.5 * _unit(factors[:, offset + 4], c_y))
        if c_x == 1:
            cx = np.full_like(cx, size / 2)
        if c_y == 1:
            cy = np.full_like(cy, size / 2)
        mask = _sprite_masks(size, shape_idx, scale_u, angle, cx, cy)
        if not colored:
            return mask
        tint = PALETTE[factors[:, 0]].astype(np.float32)  # (N, 3)
        return (mask[:, :, None] * tint[:, None, :]).reshape(mask.shape[0], -1)

    return renderer


def dsprites_lite(size=16, shapes=3, scales=6, orientations=8, positions=16, colors=None):
    if shapes < 1 or shapes > len(SHAPES):
        raise FactorError(f"shapes must be in 1..{len(SHAPES)}")
    pairs = [("shape", shapes), ("scale", scales), ("orientation", orientations),
             ("posX", positions), ("posY", positions)]
    colored = colors is not None
    if colored:
        if not 1 <= colors <= len(PALETTE):
            raise FactorError(f"colors must be in 1..{len(PALETTE)}")
        pairs.insert(0, ("color", colors))
    space = FactorSpace.from_pairs(pairs)
    config = {"name": "color-dsprites-lite" if colored else "dsprites-lite", "size": size,
              "shapes": shapes, "scales": scales, "orientations": orientations,
              "positions": positions}
    if colored:
        config["colors"] = colors
    renderer = _make_sprite_renderer(size, space.cardinalities, colored)
    return FactorWorld(config["name"], space, (size, size, 3 if colored else 1), config, renderer)


def color_dsprites_lite(size=16, colors=5, **kwargs):
    return dsprites_lite(size=size, colors=colors, **kwargs)


_BUILDERS = {"dsprites-lite": dsprites_lite, "color-dsprites-lite": color_dsprites_lite}
WORLD_KEYS = {"name", "size", "shapes", "scales", "orientations", "positions", "colors"}


def make_world(config):
    """Build a world from a name or a config dict such as ``{"name": ..., "size": 64}``."""
    if isinstance(config, str):
        config = {"name": config}
    config = dict(config)
    unknown = set(config) - WORLD_KEYS
    if unknown:
        raise FactorError(f"unknown world keys: {sorted(unknown)}")
    name = config.pop("name", None)
    if name not in _BUILDERS:
        raise FactorError(f"unknown world {name!r}; choose from {sorted(_BUILDERS)}")
    if name == "dsprites-lite" and "colors" in config:
        raise FactorError("dsprites-lite has no colors factor")
    return _BUILDERS[name](**config)
