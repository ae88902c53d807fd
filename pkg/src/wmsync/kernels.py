"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Set ``WMSYNC_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

_ext = None
if not os.environ.get("WMSYNC_PURE_PYTHON"):
    try:
        from . import _ckernels as _ext
    except ImportError:  # extension not built
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _pykernels

CONSTANT = 0
EDGE = 1


def warp_affine(src, matrix, out_shape, mode=CONSTANT, cval=0.0, backend=None):
    """Sample ``src`` bilinearly at ``matrix @ [col, row, 1]`` for every output pixel.

    ``matrix`` is the 2x3 inverse map from output pixel coordinates to source
    pixel coordinates. ``mode`` selects constant padding or edge replication
    for samples that fall outside the source.
    """
    impl = _select(backend)
    src = np.ascontiguousarray(src, dtype=np.float64)
    matrix = np.ascontiguousarray(np.asarray(matrix, dtype=np.float64)[:2, :3])
    out_h, out_w = (int(v) for v in out_shape)
    return impl.warp_affine(src, matrix, out_h, out_w, int(mode), float(cval))


def qim_quantize(means, q, bits, backend=None):
    impl = _select(backend)
    means = np.ascontiguousarray(np.atleast_1d(means), dtype=np.float64)
    bits = np.ascontiguousarray(np.atleast_1d(bits), dtype=np.int8)
    return impl.qim_quantize(means, float(q), bits)


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        if _ext is None:
            raise RuntimeError("compiled kernels are not available")
        return _ext
    raise ValueError(f"unknown backend {backend!r}")
