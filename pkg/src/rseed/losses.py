"""Decomposition and enhancement losses.

``l_re``  reconstruction      mean((I_low - R*L)^2)
``l_e``   illumination target mean(|max_c blur(I_low) - L|)
``l_s``   smoothness          mean(|grad L| / exp(w)) + tau * mean(|grad R|)
``l_i``   exposure control    mean(|E - R*L^gamma|)

``w`` is the channel-mean of |grad R| per direction, so illumination edges
are cheap where the reflectance has edges too.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .retinex import RetinexState, enhance_compose, reconstruct
from .tensor import ShapeError, Tensor, absolute, channel_max, exp, mean, spatial_gradient

BLUR_SIZE = 25
BLUR_SIGMA = 2.0


@dataclass
class LossWeights:
    lambda_re: float = 12.0
    lambda_e: float = 0.05
    lambda_s: float = 0.03
    lambda_i: float = 0.01
    tau: float = 0.6
    exposure_e: float = 0.6

    def __post_init__(self):
        for key in ("lambda_re", "lambda_e", "lambda_s", "lambda_i", "tau"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be non-negative, got {getattr(self, key)}")
        if not 0 < self.exposure_e < 1:
            raise ValueError(f"exposure_e must lie in (0, 1), got {self.exposure_e}")

    def as_dict(self):
        return asdict(self)


def gaussian_kernel1d(size=BLUR_SIZE, sigma=BLUR_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def gaussian_kernel2d(size=BLUR_SIZE, sigma=BLUR_SIGMA):
    g = gaussian_kernel1d(size, sigma)
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_blur(image, size=BLUR_SIZE, sigma=BLUR_SIGMA):
    """Separable Gaussian blur of a C x H x W array with reflect padding (float64 internally)."""
    img = np.asarray(image, dtype=np.float64)
    g = gaussian_kernel1d(size, sigma)
    p = size // 2
    _, H, W = img.shape
    # numpy reflects repeatedly when the pad exceeds the image
    padded = np.pad(img, ((0, 0), (p, p), (0, 0)), mode="reflect")
    rows = sum(g[i] * padded[:, i:i + H, :] for i in range(size))
    padded = np.pad(rows, ((0, 0), (0, 0), (p, p)), mode="reflect")
    return sum(g[i] * padded[:, :, i:i + W] for i in range(size))


def illumination_target(i_low):
    """Per-pixel max over colour channels of the blurred input; a constant 1 x H x W tensor."""
    arr = i_low.data if isinstance(i_low, Tensor) else np.asarray(i_low)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"illumination target needs a 3 x H x W image, got {arr.shape}")
    blurred = gaussian_blur(arr).astype(np.float32)
    return channel_max(Tensor(blurred))


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def loss_reconstruction(i_low, reconstruction):
    _check_same(i_low, reconstruction, "reconstruction loss")
    d = i_low - reconstruction
    return mean(d * d)


def loss_illumination_consistency(target, illumination):
    _check_same(target, illumination, "illumination loss")
    return mean(absolute(target - illumination))


def loss_smoothness(illumination, reflectance, tau):
    if illumination.shape[1:] != reflectance.shape[1:]:
        raise ShapeError(f"smoothness loss: {illumination.shape} vs {reflectance.shape}")
    C, H, W = reflectance.shape
    grad_l = absolute(spatial_gradient(illumination))           # 2 x H x W
    grad_r = absolute(spatial_gradient(reflectance))            # 2C x H x W
    weight = mean(grad_r.reshape(2, C, H, W), axis=1)           # 2 x H x W
    return mean(grad_l / exp(weight)) + tau * mean(grad_r)


def loss_illumination_control(reflectance, illumination, gamma, exposure_e):
    out = enhance_compose(RetinexState(reflectance, illumination, gamma))
    return mean(absolute(exposure_e - out))


def loss_total(parts, weights):
    """Weighted sum; terms with a zero weight are left out of the graph entirely."""
    total = None
    for key, lam in (("l_re", weights.lambda_re), ("l_e", weights.lambda_e),
                     ("l_s", weights.lambda_s), ("l_i", weights.lambda_i)):
        if lam == 0:
            continue
        term = parts[key] * lam
        total = term if total is None else total + term
    if total is None:
        ref = next(iter(parts.values()))
        total = Tensor(np.zeros((), dtype=ref.dtype))
    return total


def compute_losses(i_low, target, state, weights):
    """All four terms for one Retinex state plus their weighted total."""
    parts = {
        "l_re": loss_reconstruction(i_low, reconstruct(state)),
        "l_e": loss_illumination_consistency(target, state.illumination),
        "l_s": loss_smoothness(state.illumination, state.reflectance, weights.tau),
        "l_i": loss_illumination_control(state.reflectance, state.illumination, state.gamma,
                                         weights.exposure_e),
    }
    return loss_total(parts, weights), parts
