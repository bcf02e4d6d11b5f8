"""Zero-shot low-light image enhancement by optimising the input seeds of
frozen Retinex decoders.

The pieces, bottom up: :mod:`rseed.tensor` (autodiff), :mod:`rseed.decoder`,
:mod:`rseed.retinex`, :mod:`rseed.losses`, :mod:`rseed.optim` (Adam and the
enhancement loop), :mod:`rseed.pretrain`, :mod:`rseed.metrics` and
:mod:`rseed.cli`.
"""

__version__ = "0.1.0"

from .config import EnhanceConfig, InitSetting, OptimizationMode  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .optim import EnhanceResult, build_decoders, run  # noqa: E402

__all__ = ["BACKEND", "EnhanceConfig", "EnhanceResult", "InitSetting", "OptimizationMode",
           "build_decoders", "run", "__version__"]
