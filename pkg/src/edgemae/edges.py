"""Sobel and Prewitt gradient-magnitude edge maps."""

from __future__ import annotations

import math

import numpy as np

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
PREWITT_X = np.array([[-1, 0, 1], [-1, 0, 1], [-1, 0, 1]], dtype=np.float64)

# analytic maxima of the gradient magnitude for inputs in [0, 1]
SOBEL_NORM = 4.0 * math.sqrt(2.0)
PREWITT_NORM = 3.0 * math.sqrt(2.0)


def _derivatives(img: np.ndarray, kernel_x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical responses of an antisymmetric 3x3 kernel, edge-padded.

    Each response is a weighted sum of (far - near) differences, so constant
    images give exact zeros and gy(img) is exactly gx(img.T).T.
    """
    w = kernel_x[:, 2]
    assert np.array_equal(kernel_x[:, 0], -w) and not kernel_x[:, 1].any(), "kernel must be antisymmetric"
    h, wd = img.shape
    p = np.pad(img, 1, mode="edge")
    gx = np.zeros((h, wd), dtype=np.float64)
    gy = np.zeros((h, wd), dtype=np.float64)
    for k in range(3):
        gx += w[k] * (p[k:k + h, 2:2 + wd] - p[k:k + h, 0:wd])
        gy += w[k] * (p[2:2 + h, k:k + wd] - p[0:h, k:k + wd])
    return gx, gy


def gradient_magnitude(pixels, kernel_x: np.ndarray) -> np.ndarray:
    img = np.asarray(getattr(pixels, "pixels", pixels), dtype=np.float64)
    gx, gy = _derivatives(img, kernel_x)
    return np.sqrt(gx * gx + gy * gy)


def sobel_edge_map(pixels) -> np.ndarray:
    return np.clip(gradient_magnitude(pixels, SOBEL_X) / SOBEL_NORM, 0.0, 1.0).astype(np.float32)


def prewitt_edge_map(pixels) -> np.ndarray:
    return np.clip(gradient_magnitude(pixels, PREWITT_X) / PREWITT_NORM, 0.0, 1.0).astype(np.float32)


DETECTORS = {"sobel": sobel_edge_map, "prewitt": prewitt_edge_map}
