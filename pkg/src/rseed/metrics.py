"""Full-reference image quality metrics on RGB images in [0, 1]."""

from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 100.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    per_image: list = field(default_factory=list)  # (name, psnr_db, ssim)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """10 log10(1 / MSE) in dB, capped at 100 dB for identical images."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def _window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation over the last two axes, 'valid' positions only
    n = g.size
    H, W = img.shape[-2:]
    rows = sum(g[i] * img[..., i:H - n + 1 + i, :] for i in range(n))
    return sum(g[i] * rows[..., :, i:W - n + 1 + i] for i in range(n))


def ssim(a, b, channel_axis=0):
    """Mean SSIM over valid 11x11 Gaussian windows, averaged over channels.

    Images are C x H x W (``channel_axis=0``), H x W x C (``-1``) or 2-D.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    elif channel_axis in (-1, 2):
        a, b = np.moveaxis(a, -1, 0), np.moveaxis(b, -1, 0)
    if min(a.shape[-2:]) < SSIM_WIN:
        raise ValueError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape[-2:]}")
    g = _window()
    c1 = (K1 * 1.0) ** 2
    c2 = (K2 * 1.0) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    per_channel = (num / den).reshape(a.shape[0], -1).mean(axis=1)
    return float(per_channel.mean())


def evaluate(pairs):
    """``pairs``: iterable of (name, enhanced, reference).  Returns a MetricReport of means."""
    rows = [(name, psnr(x, y), ssim(x, y)) for name, x, y in pairs]
    if not rows:
        raise ValueError("no image pairs to evaluate")
    return MetricReport(float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows])), rows)
