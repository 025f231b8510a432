import math

import numpy as np
import pytest

from untangle.worlds import (FactorError, FactorSpace, GridTooLarge, color_dsprites_lite,
                             dsprites_lite, enumerate_grid, make_world, render, sample_factors,
                             sample_with_factor_fixed)


def toy_world(cards):
    # a tiny dsprites-lite needs 5 factors; for pure sampling tests a space is enough
    return FactorSpace.from_pairs([(f"f{i}", c) for i, c in enumerate(cards)])


def plugin_mi(a, b):
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1)
    p = joint / joint.sum()
    pa, pb = p.sum(1, keepdims=True), p.sum(0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (pa @ pb)[nz])))


def test_single_value_factors_give_zero_rows():
    space = toy_world((1, 1, 1))
    f = sample_factors(space, 5, seed=0)
    assert f.shape == (5, 3) and not f.any()


def test_sampling_is_uniform_per_column():
    n = 100000
    f = sample_factors(toy_world((3, 6)), n, seed=7)
    for col, card in enumerate((3, 6)):
        counts = np.bincount(f[:, col], minlength=card)
        p = 1.0 / card
        sigma = math.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) < 3 * sigma)


def test_sampling_is_deterministic():
    w = dsprites_lite()
    assert np.array_equal(sample_factors(w, 100, 3), sample_factors(w, 100, 3))
    assert not np.array_equal(sample_factors(w, 100, 3), sample_factors(w, 100, 4))


def test_factorized_prior_has_negligible_mutual_information():
    f = sample_factors(dsprites_lite(), 100000, seed=1)
    for i in range(5):
        for j in range(i + 1, 5):
            assert plugin_mi(f[:, i], f[:, j]) < 0.01


def test_sample_requires_positive_n():
    with pytest.raises(FactorError):
        sample_factors(dsprites_lite(), 0, 1)


def test_centered_max_scale_square():
    w = dsprites_lite(positions=3)
    img = render(w, np.array([[0, 5, 0, 1, 1]]))[0].reshape(16, 16)
    # centre 8, half-size 0.25 * 16 = 4: pixel centres 4.5..11.5 lie inside
    expected = np.zeros((16, 16), dtype=np.float32)
    expected[4:12, 4:12] = 1.0
    assert np.array_equal(img, expected)
    assert set(np.unique(img)) == {0.0, 1.0}


def test_render_empty_batch():
    w = dsprites_lite()
    out = render(w, np.zeros((0, 5), dtype=np.int64))
    assert out.shape == (0, 256)


def test_render_is_pure():
    w = color_dsprites_lite()
    f = sample_factors(w, 500, 2)
    assert render(w, f).tobytes() == render(w, f).tobytes()


def test_render_values_in_unit_interval_and_shapes():
    w = color_dsprites_lite()
    out = render(w, sample_factors(w, 300, 0))
    assert out.shape == (300, 16 * 16 * 3)
    assert out.min() >= 0 and out.max() <= 1
    g = render(dsprites_lite(), sample_factors(dsprites_lite(), 300, 0))
    assert set(np.unique(g)) <= {0.0, 1.0}


def test_distinct_orientations_render_differently():
    w = dsprites_lite()
    for shape in range(3):
        rows = np.array([[shape, 5, o, 8, 8] for o in range(8)])
        imgs = render(w, rows)
        assert len({im.tobytes() for im in imgs}) == 8


def test_render_rejects_out_of_range_naming_row_and_column():
    w = dsprites_lite()
    bad = np.array([[0, 0, 0, 0, 0], [0, 6, 0, 0, 0]])
    with pytest.raises(FactorError, match=r"row 1.*(column 1|scale)"):
        render(w, bad)


def test_fixed_factor_sampling():
    space = toy_world((4, 5))
    f, value = sample_with_factor_fixed(space, 0, 4, seed=2)
    assert np.all(f[:, 0] == value) and 0 <= value < 4
    f, value = sample_with_factor_fixed(toy_world((1, 5)), 0, 10, seed=2)
    assert value == 0 and not f[:, 0].any()
    with pytest.raises(FactorError):
        sample_with_factor_fixed(space, 2, 4, seed=0)


def test_fixed_factor_other_columns_uniform():
    n = 50000
    f, _ = sample_with_factor_fixed(toy_world((3, 6, 4)), 1, n, seed=9)
    for col, card in ((0, 3), (2, 4)):
        counts = np.bincount(f[:, col], minlength=card)
        p = 1 / card
        assert np.all(np.abs(counts - n * p) < 3 * math.sqrt(n * p * (1 - p)))


def test_enumerate_grid_order():
    grid = enumerate_grid(toy_world((2, 3)))
    assert grid.tolist() == [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]


def test_enumerate_grid_covers_everything_once():
    w = dsprites_lite(positions=4)
    grid = enumerate_grid(w)
    assert grid.shape[0] == 3 * 6 * 8 * 4 * 4
    assert len({tuple(r) for r in grid}) == grid.shape[0]


def test_enumerate_grid_cap():
    with pytest.raises(GridTooLarge, match="10000000"):
        enumerate_grid(toy_world((10,) * 7))


def test_space_invariants():
    with pytest.raises(FactorError):
        FactorSpace.from_pairs([("a", 3)])
    with pytest.raises(FactorError):
        FactorSpace.from_pairs([("a", 3), ("a", 2)])
    with pytest.raises(FactorError):
        FactorSpace.from_pairs([("a", 0), ("b", 2)])


def test_normalized_values():
    space = toy_world((1, 5))
    norm = space.normalize(np.array([[0, 0], [0, 4], [0, 2]]))
    assert norm.tolist() == [[0, 0], [0, 1], [0, 0.5]]


def test_make_world_strict():
    assert make_world("dsprites-lite").space.cardinalities == (3, 6, 8, 16, 16)
    assert make_world({"name": "color-dsprites-lite"}).space.names[0] == "color"
    with pytest.raises(FactorError):
        make_world({"name": "dsprites-lite", "colour": 3})
    with pytest.raises(FactorError):
        make_world("cars3d")


def test_manifest_hash_tracks_config():
    assert dsprites_lite().manifest_hash() == dsprites_lite().manifest_hash()
    assert dsprites_lite().manifest_hash() != dsprites_lite(size=64).manifest_hash()
