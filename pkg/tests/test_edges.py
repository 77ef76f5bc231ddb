import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays
from hypothesis import strategies as st

from edgemae.edges import PREWITT_X, SOBEL_X, gradient_magnitude, prewitt_edge_map, sobel_edge_map

unit_images = arrays(np.float32, st.tuples(st.integers(3, 12), st.integers(3, 12)),
                     elements=st.floats(0, 1, width=32))


@pytest.mark.parametrize("fn", [sobel_edge_map, prewitt_edge_map])
def test_constant_gives_zero(fn):
    assert not fn(np.full((10, 10), 0.37, np.float32)).any()


def test_sobel_ramp_interior():
    img = 0.1 * np.tile(np.arange(8.0), (8, 1))
    e = sobel_edge_map(img)
    # hand convolution: Gx = (1 + 2 + 1) * 2 * 0.1 = 0.8, Gy = 0
    assert e[1:-1, 1:-1] == pytest.approx(0.8 / (4 * math.sqrt(2)), abs=1e-6)
    assert 0.8 / (4 * math.sqrt(2)) == pytest.approx(0.141421, abs=1e-6)


def test_prewitt_ramp_interior():
    img = 0.1 * np.tile(np.arange(8.0), (8, 1))
    e = prewitt_edge_map(img)
    assert e[1:-1, 1:-1] == pytest.approx(0.6 / (3 * math.sqrt(2)), abs=1e-6)


def test_replicate_border_halves_ramp_at_frame():
    img = 0.1 * np.tile(np.arange(8.0), (8, 1))
    raw = gradient_magnitude(img, SOBEL_X)
    assert raw[3, 0] == pytest.approx(0.4)  # replicate padding: one-sided difference
    assert raw[0, 3] == pytest.approx(0.8)


@pytest.mark.parametrize("fn", [sobel_edge_map, prewitt_edge_map])
@settings(max_examples=40)
@given(img=unit_images)
def test_transpose_and_rotation(fn, img):
    assert np.array_equal(fn(img.T), fn(img).T)
    assert np.allclose(fn(np.rot90(img)), np.rot90(fn(img)), atol=1e-6)


@pytest.mark.parametrize("fn", [sobel_edge_map, prewitt_edge_map])
@settings(max_examples=40)
@given(img=unit_images)
def test_range(fn, img):
    e = fn(img)
    assert e.min() >= 0 and e.max() <= 1


def test_normalisers_bound_binary_images():
    rng = np.random.default_rng(2)
    for _ in range(200):
        img = (rng.random((5, 5)) > 0.5).astype(float)
        assert gradient_magnitude(img, SOBEL_X).max() <= 4 * math.sqrt(2) + 1e-12
        assert gradient_magnitude(img, PREWITT_X).max() <= 3 * math.sqrt(2) + 1e-12
    corner = np.array([[1, 1, 1], [1, 1, 0], [1, 0, 0]], dtype=float)
    assert gradient_magnitude(corner, SOBEL_X)[1, 1] == pytest.approx(4 * math.sqrt(2) * 0.75)


@given(img=arrays(np.float64, (6, 6), elements=st.floats(0, 0.5)))
def test_linearity_of_unnormalised_magnitude(img):
    assert np.allclose(gradient_magnitude(2 * img, SOBEL_X), 2 * gradient_magnitude(img, SOBEL_X))
