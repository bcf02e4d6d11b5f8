"""Retinex composition: image = reflectance * illumination, enhanced = R * L**gamma."""

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, pow_tensor

GAMMA_MIN = 0.01
GAMMA_MAX = 10.0


class GammaParam:
    """Learnable scalar exponent for the illumination map, kept inside [lo, hi]."""

    def __init__(self, value=0.5, bounds=(GAMMA_MIN, GAMMA_MAX)):
        lo, hi = bounds
        if not 0 < lo <= hi:
            raise ValueError(f"invalid gamma bounds {bounds}")
        self.bounds = (float(lo), float(hi))
        self.tensor = Tensor(np.array(float(value), dtype=np.float32), requires_grad=True, name="gamma")
        self.clamp()

    @property
    def value(self):
        return float(self.tensor.data)

    def clamp(self):
        lo, hi = self.bounds
        np.clip(self.tensor.data, lo, hi, out=self.tensor.data)


@dataclass
class RetinexState:
    reflectance: Tensor   # 3 x H x W
    illumination: Tensor  # 1 x H x W
    gamma: Tensor         # scalar

    def __post_init__(self):
        r, l = self.reflectance.shape, self.illumination.shape
        if len(r) != 3 or r[0] != 3:
            raise ShapeError(f"reflectance must be 3 x H x W, got {r}")
        if len(l) != 3 or l[0] != 1:
            raise ShapeError(f"illumination must be 1 x H x W, got {l}")
        if r[1:] != l[1:]:
            raise ShapeError(f"reflectance {r} and illumination {l} differ spatially")


def _as_gamma(gamma):
    if isinstance(gamma, GammaParam):
        return gamma.tensor
    if isinstance(gamma, Tensor):
        return gamma
    return Tensor(np.array(float(gamma), dtype=np.float32))


def reconstruct(state):
    """R * L, with L broadcast over the colour channels."""
    return state.reflectance * state.illumination


def gamma_transform(illumination, gamma):
    gamma = _as_gamma(gamma)
    if np.any(gamma.data <= 0):
        raise ValueError(f"gamma must be positive, got {gamma.data}")
    return pow_tensor(illumination, gamma)


def enhance_compose(state):
    """R * L**gamma."""
    return state.reflectance * gamma_transform(state.illumination, state.gamma)


def compose_arrays(reflectance, illumination, gamma):
    """Numpy-only recomposition of saved run artifacts (same float32 arithmetic)."""
    r = np.asarray(reflectance, dtype=np.float32)
    l = np.asarray(illumination, dtype=np.float32)
    return r * np.power(l, np.float32(gamma))
