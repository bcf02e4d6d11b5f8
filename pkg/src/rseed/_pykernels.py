"""Pure numpy versions of the hot kernels (used when the extension is absent).

All arrays are channels-last: H x W x C.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, p, reflect):
    mode = "reflect" if reflect else "constant"
    return np.pad(x, ((p, p), (p, p), (0, 0)), mode=mode)


def im2col(x, k, reflect):
    H, W, C = x.shape
    p = (k - 1) // 2
    xp = _pad(x, p, reflect)
    win = sliding_window_view(xp, (k, k), axis=(0, 1))  # H, W, C, k, k
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(H * W, k * k * C)


def _fold_reflect(dxp, p, H, W):
    # gradient of reflect padding: mirrored border cells add back into their sources
    dx = dxp[p:p + H].copy()
    if p:
        dx[1:p + 1] += dxp[:p][::-1]
        dx[H - 1 - p:H - 1] += dxp[p + H:][::-1]
    out = dx[:, p:p + W].copy()
    if p:
        out[:, 1:p + 1] += dx[:, :p][:, ::-1]
        out[:, W - 1 - p:W - 1] += dx[:, p + W:][:, ::-1]
    return out


def col2im(cols, H, W, C, k, reflect):
    p = (k - 1) // 2
    c5 = cols.reshape(H, W, k, k, C)
    dxp = np.zeros((H + 2 * p, W + 2 * p, C), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[ki:ki + H, kj:kj + W] += c5[:, :, ki, kj]
    if reflect:
        return _fold_reflect(dxp, p, H, W)
    return np.ascontiguousarray(dxp[p:p + H, p:p + W])


def upsample2x(x):
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def upsample2x_backward(g):
    return ((g[0::2, 0::2] + g[0::2, 1::2])
            + (g[1::2, 0::2] + g[1::2, 1::2]))
