"""Pure-numpy fallbacks for the compiled kernels in ``_ckernels``."""

import numpy as np


def _fetch(src, y, x, mode, cval):
    h, w = src.shape
    if mode == 1:
        return src[np.clip(y, 0, h - 1), np.clip(x, 0, w - 1)]
    valid = (x >= 0) & (x < w) & (y >= 0) & (y < h)
    vals = src[np.where(valid, y, 0), np.where(valid, x, 0)]
    return np.where(valid, vals, cval)


def warp_affine(src, matrix, out_h, out_w, mode=0, cval=0.0):
    """Bilinear inverse-map warp: ``out[i, j] = src(matrix @ [j, i, 1])``."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    m = np.asarray(matrix, dtype=np.float64)
    fi, fj = np.meshgrid(
        np.arange(out_h, dtype=np.float64), np.arange(out_w, dtype=np.float64), indexing="ij"
    )
    sx = m[0, 0] * fj + m[0, 1] * fi + m[0, 2]
    sy = m[1, 0] * fj + m[1, 1] * fi + m[1, 2]
    bx = np.floor(sx)
    by = np.floor(sy)
    x0 = bx.astype(np.intp)
    y0 = by.astype(np.intp)
    fx = sx - bx
    fy = sy - by
    top = (1.0 - fx) * _fetch(src, y0, x0, mode, cval) + fx * _fetch(src, y0, x0 + 1, mode, cval)
    bottom = (1.0 - fx) * _fetch(src, y0 + 1, x0, mode, cval) + fx * _fetch(
        src, y0 + 1, x0 + 1, mode, cval
    )
    return (1.0 - fy) * top + fy * bottom


def qim_quantize(means, q, bits):
    """Vectorised QIM level selection for nonnegative band means."""
    x = np.asarray(means, dtype=np.float64) / q
    base = np.floor(x)
    frac = x - base
    level = np.where(frac >= 0.5, base + 1.0, base)
    parity = (level - 2.0 * np.floor(level / 2.0)).astype(np.int64)
    wrong = parity != np.asarray(bits, dtype=np.int64)
    level = np.where(wrong, np.where(frac < 0.5, level + 1.0, level - 1.0), level)
    return level * q
