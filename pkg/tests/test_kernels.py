import numpy as np
import pytest

from wmsync import kernels, _pykernels
from wmsync.geometry import RstParams, rst_matrix

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")


class TestSelection:
    def test_backend_name(self):
        assert kernels.BACKEND in ("cython", "python")

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            kernels.qim_quantize([1.0], 3.0, [0], backend="fortran")

    def test_fallback_module_importable(self):
        assert hasattr(_pykernels, "warp_affine") and hasattr(_pykernels, "qim_quantize")


@needs_ext
class TestParity:
    @pytest.mark.parametrize("mode", [kernels.CONSTANT, kernels.EDGE])
    @pytest.mark.parametrize("params", [RstParams(), RstParams(33.0, 1.1, 0.8, 0.1, -0.2),
                                        RstParams(90.0), RstParams(0, 2, 2)])
    def test_warp(self, rng, mode, params):
        src = rng.uniform(0, 255, (96, 80))
        inv = np.linalg.inv(rst_matrix(params, 80, 96))
        a = kernels.warp_affine(src, inv, (96, 80), mode=mode, cval=7.0, backend="python")
        b = kernels.warp_affine(src, inv, (96, 80), mode=mode, cval=7.0, backend="cython")
        assert np.array_equal(a, b)

    def test_quantize(self, rng):
        A = np.concatenate([rng.uniform(0, 40, 5000), np.arange(0, 30, 0.5)])
        bits = rng.integers(0, 2, A.size)
        for q in (1.0, 3.0, 5.0):
            assert np.array_equal(kernels.qim_quantize(A, q, bits, backend="python"),
                                  kernels.qim_quantize(A, q, bits, backend="cython"))


class TestWarpSemantics:
    @pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=needs_ext)])
    def test_identity_and_shift(self, rng, backend):
        src = rng.uniform(0, 1, (10, 12))
        eye = np.array([[1.0, 0, 0], [0, 1.0, 0]])
        assert np.array_equal(kernels.warp_affine(src, eye, src.shape, backend=backend), src)
        shift = np.array([[1.0, 0, 2.0], [0, 1.0, 0]])
        out = kernels.warp_affine(src, shift, src.shape, backend=backend)
        assert np.array_equal(out[:, :10], src[:, 2:])
        assert np.all(out[:, 10:] == 0)

    @pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=needs_ext)])
    def test_bilinear_midpoint(self, backend):
        src = np.array([[0.0, 10.0], [20.0, 30.0]])
        m = np.array([[0.0, 0, 0.5], [0, 0.0, 0.5]])
        assert kernels.warp_affine(src, m, (1, 1), backend=backend)[0, 0] == pytest.approx(15.0)

    @pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=needs_ext)])
    def test_edge_mode(self, backend):
        src = np.array([[1.0, 2.0], [3.0, 4.0]])
        m = np.array([[1.0, 0, -5.0], [0, 1.0, 0]])
        out = kernels.warp_affine(src, m, (2, 2), mode=kernels.EDGE, backend=backend)
        assert np.array_equal(out, [[1.0, 1.0], [3.0, 3.0]])
