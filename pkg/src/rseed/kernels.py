"""Backend selection for the convolution / upsampling hot loops.

The compiled extension ``rseed._ckernels`` is used when it imports; otherwise
the numpy versions in ``rseed._pykernels`` are used.  Set ``RSEED_PURE=1``
to force the fallback.  Both operate on channels-last (H x W x C) arrays.
"""

import os
from contextlib import contextmanager

import numpy as np

from . import _pykernels

_c = None
if os.environ.get("RSEED_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _c
    except ImportError:  # extension not built
        _c = None

BACKEND = "cython" if _c is not None else "numpy"
AVAILABLE = ("cython", "numpy") if _c is not None else ("numpy",)


@contextmanager
def use_backend(name):
    """Temporarily switch the default backend (benchmarks, equivalence tests)."""
    global BACKEND
    if name not in AVAILABLE:
        raise ValueError(f"backend {name!r} is not available; have {AVAILABLE}")
    prev, BACKEND = BACKEND, name
    try:
        yield
    finally:
        BACKEND = prev


def _impl(name, backend=None):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _c is None:
            raise RuntimeError("compiled kernels are not available")
        return getattr(_c, name)
    if backend == "numpy":
        return getattr(_pykernels, name)
    raise ValueError(f"unknown backend {backend!r}")


def im2col(x, k, reflect=True, backend=None):
    """Patches of an H x W x C array as an (H*W, k*k*C) matrix, stride 1, 'same' padding."""
    return _impl("im2col", backend)(np.ascontiguousarray(x), int(k), bool(reflect))


def col2im(cols, shape, k, reflect=True, backend=None):
    """Adjoint of :func:`im2col`: scatter-add patch rows back to H x W x C."""
    H, W, C = shape
    return _impl("col2im", backend)(np.ascontiguousarray(cols), H, W, C, int(k), bool(reflect))


def upsample2x(x, backend=None):
    return _impl("upsample2x", backend)(np.ascontiguousarray(x))


def upsample2x_backward(g, backend=None):
    return _impl("upsample2x_backward", backend)(np.ascontiguousarray(g))
