import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgemae.config import ConfigError
from edgemae.patches import (alpha_pixels, compute_alpha, masked_count, patchify, sample_mask, stage_weight,
                             unpatchify, PatchGrid)
from edgemae.rng import Rng


def brute_alpha(mask):
    """Independent oracle: explicit in-bounds neighbour average."""
    gh, gw = mask.shape
    out = np.zeros((gh, gw))
    for i in range(gh):
        for j in range(gw):
            vals = [mask[a, b] for a in range(i - 1, i + 2) for b in range(j - 1, j + 2)
                    if 0 <= a < gh and 0 <= b < gw]
            out[i, j] = sum(vals) / len(vals)
    return out


def test_patchify_shapes():
    g = patchify(np.zeros((64, 64), np.float32), 8)
    assert g.tokens.shape == (64, 64) and (g.grid_h, g.grid_w) == (8, 8)
    g = patchify(np.zeros((256, 256), np.float32), 8)
    assert (g.grid_h, g.grid_w) == (32, 32)


def test_patchify_order():
    img = np.arange(16, dtype=np.float32).reshape(4, 4)
    g = patchify(img, 2)
    assert g.tokens[0].tolist() == [0, 1, 4, 5]
    assert g.tokens[1].tolist() == [2, 3, 6, 7]
    assert g.tokens[2].tolist() == [8, 9, 12, 13]


def test_constant_image_identical_rows():
    g = patchify(np.full((32, 32), 0.3, np.float32), 8)
    assert (g.tokens == g.tokens[0]).all()


def test_patchify_rejects_indivisible():
    with pytest.raises(ConfigError):
        patchify(np.zeros((30, 32)), 8)


def test_unpatchify_inverse_on_random_images():
    rng = np.random.default_rng(1)
    for _ in range(100):
        img = rng.random((32, 48)).astype(np.float32)
        assert unpatchify(patchify(img, 8)).tobytes() == img.tobytes()


def test_unpatchify_degenerate():
    assert not unpatchify(PatchGrid(np.zeros((4, 64), np.float32), 2, 2, 8)).any()
    single = np.arange(64, dtype=np.float32).reshape(1, 64)
    assert unpatchify(PatchGrid(single, 1, 1, 8)).ravel().tolist() == single.ravel().tolist()


def test_mask_default_count():
    plan = sample_mask(8, 8, 0.70, Rng(0))
    assert plan.n_masked == 44 and (plan.mask == 0).sum() == 20
    assert set(np.unique(plan.mask)) <= {0, 1}


def test_mask_seed7_pinned():
    plan = sample_mask(4, 4, 0.5, Rng(7))
    assert sorted(np.flatnonzero(plan.mask).tolist()) == [1, 3, 4, 6, 7, 9, 10, 14]
    assert np.array_equal(plan.mask, sample_mask(4, 4, 0.5, Rng(7)).mask)


@given(st.floats(0.001, 0.999), st.floats(0.001, 0.999), st.integers(1, 400))
def test_masked_count_monotone(r1, r2, n):
    lo, hi = sorted((r1, r2))
    assert masked_count(n, lo) <= masked_count(n, hi)


@settings(max_examples=100)
@given(st.integers(1, 10), st.integers(1, 10), st.floats(0.01, 0.99), st.integers(0, 2**64 - 1))
def test_mask_cardinality(gh, gw, ratio, seed):
    plan = sample_mask(gh, gw, ratio, Rng(seed))
    assert plan.n_masked == int(np.floor(ratio * gh * gw + 1e-9))


@pytest.mark.parametrize("ratio", [0.0, 1.0, -0.5, 1.5])
def test_mask_rejects_ratio(ratio):
    with pytest.raises(ConfigError):
        sample_mask(4, 4, ratio, Rng(0))


def test_mask_uniform_over_positions():
    # each of 16 cells should be masked ~half the time
    rng = Rng(3)
    hits = sum(sample_mask(4, 4, 0.5, rng).mask.astype(int) for _ in range(4000))
    assert np.abs(hits / 4000 - 0.5).max() < 0.04


def test_alpha_extremes():
    assert (compute_alpha(np.ones((5, 7))) == 1).all()
    assert (compute_alpha(np.zeros((5, 7))) == 0).all()


def test_alpha_2x2_example():
    assert np.allclose(compute_alpha(np.array([[1, 0], [0, 0]])), 0.25)


def test_alpha_border_counts():
    m = np.zeros((4, 4))
    m[0, 0] = 1
    a = compute_alpha(m)
    assert a[0, 0] == pytest.approx(1 / 4)  # corner: 4 valid cells
    assert a[0, 1] == pytest.approx(1 / 6)  # edge: 6 valid cells
    assert a[1, 1] == pytest.approx(1 / 9)


def test_alpha_matches_bruteforce_random():
    rng = Rng(11)
    for _ in range(200):
        plan = sample_mask(8, 8, 0.05 + 0.9 * rng.uniform(), rng)
        a = compute_alpha(plan)
        assert np.array_equal(a, brute_alpha(plan.mask).astype(np.float32))
        assert a.min() >= 0 and a.max() <= 1


def test_alpha_one_where_neighbourhood_fully_masked():
    m = np.ones((6, 6))
    m[5, 5] = 0
    a = compute_alpha(m)
    assert a[0, 0] == 1 and a[3, 3] == 1 and a[4, 4] < 1


def test_alpha_mean_tracks_ratio():
    rng = Rng(5)
    means = [compute_alpha(sample_mask(8, 8, 0.7, rng)).mean() for _ in range(1000)]
    assert abs(np.mean(means) - masked_count(64, 0.7) / 64) < 0.02
    assert abs(np.mean(means) - 0.7) < 0.02


@pytest.mark.parametrize("alpha,s1,s2", [(0.5, 1.5, 1.5), (1.0, 1.0, 2.0), (0.25, 1.75, 1.25), (0.0, 2.0, 1.0)])
def test_stage_weight_values(alpha, s1, s2):
    assert stage_weight(alpha, 1) == pytest.approx(s1)
    assert stage_weight(alpha, 2) == pytest.approx(s2)


@given(st.floats(0, 1), st.floats(0, 1))
def test_stage_weights_sum_and_monotone(a, b):
    assert stage_weight(a, 1) + stage_weight(a, 2) == pytest.approx(3.0, abs=1e-12)
    lo, hi = sorted((a, b))
    assert stage_weight(lo, 1) >= stage_weight(hi, 1)
    assert stage_weight(lo, 2) <= stage_weight(hi, 2)


def test_stage_weight_rejects():
    with pytest.raises(AssertionError):
        stage_weight(1.5, 1)
    with pytest.raises(ConfigError):
        stage_weight(0.5, 3)


def test_alpha_pixels_share_patch_weight():
    a = np.array([[0.1, 0.2], [0.3, 0.4]], dtype=np.float32)
    px = alpha_pixels(a, 4)
    assert px.shape == (8, 8)
    assert (px[:4, :4] == np.float32(0.1)).all() and (px[4:, 4:] == np.float32(0.4)).all()


def test_mask_plan_ntf_round_trip(tmp_path):
    from edgemae.ntf import read_ntf, write_ntf
    plan = sample_mask(8, 8, 0.7, Rng(1))
    write_ntf(tmp_path / "m.ntf", plan.mask)
    assert np.array_equal(read_ntf(tmp_path / "m.ntf"), plan.mask.astype(np.float32))
