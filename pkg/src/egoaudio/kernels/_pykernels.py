"""Pure-numpy versions of the compiled kernels (same signatures and semantics)."""

from __future__ import annotations

import numpy as np


def _patches(x: np.ndarray) -> np.ndarray:
    """im2col for a 3x3 window with zero padding 1: (N, C*9, H*W)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, h, w), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            cols[:, :, dy * 3 + dx] = xp[:, :, dy:dy + h, dx:dx + w]
    return cols.reshape(n, c * 9, h * w)


def conv3x3_forward(x, w, b):
    n, c, h, wd = x.shape
    k = w.shape[0]
    y = np.matmul(w.reshape(k, c * 9), _patches(x))
    y += b[None, :, None]
    return y.reshape(n, k, h, wd)


def conv3x3_backward(x, w, gy):
    n, c, h, wd = x.shape
    k = w.shape[0]
    g = gy.reshape(n, k, h * wd)
    gw = np.einsum("nkp,nqp->kq", g, _patches(x), optimize=True).reshape(w.shape)
    gb = g.sum(axis=(0, 2))
    gcols = np.matmul(w.reshape(k, c * 9).T, g).reshape(n, c, 3, 3, h, wd)
    gxp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            gxp[:, :, dy:dy + h, dx:dx + wd] += gcols[:, :, dy, dx]
    return gxp[:, :, 1:-1, 1:-1].copy(), gw.astype(x.dtype), gb.astype(x.dtype)


def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = (x[:, :, :2 * ho, :2 * wo]
           .reshape(n, c, ho, 2, wo, 2)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(n, c, ho, wo, 4))
    idx = win.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return y, idx


def maxpool2x2_backward(gy, idx, h, w):
    n, c, ho, wo = gy.shape
    win = np.zeros((n, c, ho, wo, 4), dtype=gy.dtype)
    np.put_along_axis(win, idx[..., None].astype(np.intp), gy[..., None], axis=-1)
    gx = np.zeros((n, c, h, w), dtype=gy.dtype)
    gx[:, :, :2 * ho, :2 * wo] = (win.reshape(n, c, ho, wo, 2, 2)
                                  .transpose(0, 1, 2, 4, 3, 5)
                                  .reshape(n, c, 2 * ho, 2 * wo))
    return gx
