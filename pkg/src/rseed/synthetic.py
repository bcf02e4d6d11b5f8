"""Synthetic low-light pairs: a clean image times a smooth illumination field."""

import numpy as np


def smooth_field(height, width, rng, low=0.1, high=0.3, grid=4):
    """Bilinear interpolation of a coarse random grid, rescaled to span [low, high]."""
    coarse = rng.random((grid, grid))
    ys = np.linspace(0, grid - 1, height)
    xs = np.linspace(0, grid - 1, width)
    y0 = np.clip(np.floor(ys).astype(int), 0, grid - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, grid - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = coarse[y0][:, x0]
    b = coarse[y0][:, x0 + 1]
    c = coarse[y0 + 1][:, x0]
    d = coarse[y0 + 1][:, x0 + 1]
    f = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)
    f = (f - f.min()) / max(f.max() - f.min(), 1e-12)
    return (low + (high - low) * f).astype(np.float32)


def darken(image, rng, low=0.1, high=0.3):
    """Return (dark image, field) for a 3 x H x W image in [0, 1]."""
    _, H, W = image.shape
    field = smooth_field(H, W, rng, low, high)
    return (np.asarray(image, dtype=np.float32) * field[None]).astype(np.float32), field
