# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Each function here has a numpy twin in ``_pykernels`` with the same
arithmetic order, so both backends agree to the last bit on x86-64.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline double _fetch(const double[:, ::1] src, Py_ssize_t y, Py_ssize_t x,
                          Py_ssize_t h, Py_ssize_t w, int mode, double cval) nogil:
    if mode == 1:
        if x < 0:
            x = 0
        elif x >= w:
            x = w - 1
        if y < 0:
            y = 0
        elif y >= h:
            y = h - 1
        return src[y, x]
    if x < 0 or x >= w or y < 0 or y >= h:
        return cval
    return src[y, x]


def warp_affine(const double[:, ::1] src, double[:, ::1] matrix,
                Py_ssize_t out_h, Py_ssize_t out_w, int mode=0, double cval=0.0):
    """Bilinear inverse-map warp: ``out[i, j] = src(matrix @ [j, i, 1])``."""
    cdef Py_ssize_t h = src.shape[0]
    cdef Py_ssize_t w = src.shape[1]
    cdef double m00 = matrix[0, 0], m01 = matrix[0, 1], m02 = matrix[0, 2]
    cdef double m10 = matrix[1, 0], m11 = matrix[1, 1], m12 = matrix[1, 2]
    out_arr = np.empty((out_h, out_w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, x0, y0
    cdef double sx, sy, fx, fy, fi, fj, top, bottom
    with nogil:
        for i in range(out_h):
            fi = <double>i
            for j in range(out_w):
                fj = <double>j
                sx = m00 * fj + m01 * fi + m02
                sy = m10 * fj + m11 * fi + m12
                fx = floor(sx)
                fy = floor(sy)
                x0 = <Py_ssize_t>fx
                y0 = <Py_ssize_t>fy
                fx = sx - fx
                fy = sy - fy
                top = (1.0 - fx) * _fetch(src, y0, x0, h, w, mode, cval) \
                    + fx * _fetch(src, y0, x0 + 1, h, w, mode, cval)
                bottom = (1.0 - fx) * _fetch(src, y0 + 1, x0, h, w, mode, cval) \
                    + fx * _fetch(src, y0 + 1, x0 + 1, h, w, mode, cval)
                out[i, j] = (1.0 - fy) * top + fy * bottom
    return out_arr


def qim_quantize(const double[::1] means, double q, const cnp.int8_t[::1] bits):
    """Vectorised QIM level selection for nonnegative band means."""
    cdef Py_ssize_t n = means.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k
    cdef double x, base, frac, level
    with nogil:
        for k in range(n):
            x = means[k] / q
            base = floor(x)
            frac = x - base
            level = base + 1.0 if frac >= 0.5 else base
            if <int>(level - 2.0 * floor(level / 2.0)) != bits[k]:
                if frac < 0.5:
                    level = level + 1.0
                else:
                    level = level - 1.0
            out[k] = level * q
    return out_arr
