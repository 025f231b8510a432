"""Representation functions: factor matrix -> code matrix.

The classifier scores sample factors themselves and need codes for them;
for a trained model that means render-then-encode.  On small worlds the
whole grid is encoded once and looked up.
"""

import numpy as np

from untangle.training import encode, grid_codes
from untangle.worlds import GRID_CAP, enumerate_grid, grid_index, render


def factor_representation(world):
    """Exact normalized factor values as codes."""
    space = getattr(world, "space", world)
    return lambda factors: space.normalize(factors)


def constant_representation(d=10, value=0.0):
    return lambda factors: np.full((len(factors), d), float(value))


def table_representation(space, codes):
    """Look up precomputed codes for every grid row."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[0] != space.grid_size:
        raise ValueError(f"need {space.grid_size} grid codes, got {codes.shape[0]}")
    return lambda factors: codes[grid_index(space, factors)]


def checkpoint_representation(world, checkpoint, cap=GRID_CAP):
    """Encoder means of rendered observations."""
    if world.space.grid_size <= cap:
        codes = grid_codes(world, checkpoint, enumerate_grid(world, cap))
        return table_representation(world.space, codes)
    return lambda factors: encode(checkpoint, render(world, factors))


def map_codes(represent, fn):
    """Compose a representation with a code transform (e.g. a permutation)."""
    return lambda factors: fn(represent(factors))
