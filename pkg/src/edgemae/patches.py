"""Patch grids, random masks and the difficulty weights of the patch-wise loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ConfigError
from .rng import Rng


@dataclass
class PatchGrid:
    tokens: np.ndarray  # (grid_h * grid_w, P * P)
    grid_h: int
    grid_w: int
    patch_size: int


@dataclass
class MaskPlan:
    mask: np.ndarray  # (grid_h, grid_w) uint8, 1 = masked
    ratio: float
    seed: int | None = None

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())

    def flat(self) -> np.ndarray:
        return self.mask.reshape(-1).astype(bool)


def patchify(pixels, patch_size: int) -> PatchGrid:
    px = np.asarray(getattr(pixels, "pixels", pixels))
    h, w = px.shape
    p = patch_size
    if h % p or w % p:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    tokens = px.reshape(gh, p, gw, p).transpose(0, 2, 1, 3).reshape(gh * gw, p * p)
    return PatchGrid(tokens.copy(), gh, gw, p)


def unpatchify(grid: PatchGrid) -> np.ndarray:
    p, gh, gw = grid.patch_size, grid.grid_h, grid.grid_w
    return grid.tokens.reshape(gh, gw, p, p).transpose(0, 2, 1, 3).reshape(gh * p, gw * p).copy()


def masked_count(n: int, ratio: float) -> int:
    return int(math.floor(ratio * n + 1e-9))


def sample_mask(grid_h: int, grid_w: int, ratio: float, rng: Rng) -> MaskPlan:
    """Mask exactly floor(ratio * n) patches chosen by partial Fisher-Yates."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"mask ratio must lie in (0, 1), got {ratio}")
    n = grid_h * grid_w
    m = masked_count(n, ratio)
    seed = rng.state
    idx = list(range(n))
    for i in range(m):
        j = i + int(rng.uniform() * (n - i))
        idx[i], idx[j] = idx[j], idx[i]
    mask = np.zeros(n, dtype=np.uint8)
    mask[idx[:m]] = 1
    return MaskPlan(mask.reshape(grid_h, grid_w), ratio, seed)


def compute_alpha(mask) -> np.ndarray:
    """3x3 stride-1 average pool normalized by the in-bounds neighbour count."""
    m = np.asarray(getattr(mask, "mask", mask), dtype=np.float64)
    gh, gw = m.shape
    padded = np.pad(m, 1)
    ones = np.pad(np.ones_like(m), 1)
    total = np.zeros_like(m)
    count = np.zeros_like(m)
    for di in range(3):
        for dj in range(3):
            total += padded[di:di + gh, dj:dj + gw]
            count += ones[di:di + gh, dj:dj + gw]
    return (total / count).astype(np.float32)


def stage_weight(alpha, stage: int):
    """Per-patch weight: 2 - alpha in stage 1 (easy first), 1 + alpha in stage 2."""
    a = np.asarray(alpha)
    assert np.all((a >= 0) & (a <= 1)), "alpha must lie in [0, 1]"
    if stage == 1:
        return 2.0 - alpha
    if stage == 2:
        return 1.0 + alpha
    raise ConfigError(f"stage must be 1 or 2, got {stage}")


def alpha_pixels(alpha: np.ndarray, patch_size: int) -> np.ndarray:
    """Broadcast per-patch alpha so every pixel carries its patch's weight."""
    return np.kron(alpha, np.ones((patch_size, patch_size), dtype=alpha.dtype))
