import os
import subprocess
import sys

import numpy as np
import pytest

from energygan import _backend, _kernels_py

needs_ext = pytest.mark.skipif("cython" not in _backend.available(),
                               reason="compiled extension not built")


@pytest.fixture
def both():
    from energygan import _kernels

    return _kernels, _kernels_py


@needs_ext
class TestParity:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("k,stride", [(4, 2), (3, 1), (2, 2)])
    def test_im2col_bit_identical(self, both, dtype, k, stride):
        ext, py = both
        xp = np.random.default_rng(0).normal(size=(2, 3, 10, 10)).astype(dtype)
        oh = ow = (10 - k) // stride + 1
        assert ext.im2col(xp, k, stride, oh, ow).tobytes() == py.im2col(xp, k, stride, oh, ow).tobytes()

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("k,stride", [(4, 2), (3, 1)])
    def test_col2im_bit_identical(self, both, dtype, k, stride):
        ext, py = both
        oh = ow = (10 - k) // stride + 1
        cols = np.random.default_rng(1).normal(size=(3 * k * k, 2 * oh * ow)).astype(dtype)
        shape = (2, 3, 10, 10)
        assert (ext.col2im(cols, k, stride, oh, ow, shape).tobytes()
                == py.col2im(cols, k, stride, oh, ow, shape).tobytes())

    def test_sampling_bit_identical(self, both):
        ext, py = both
        rng = np.random.default_rng(2)
        src = rng.normal(size=(9, 7, 2))
        xs = rng.uniform(-2, 9, 500)
        ys = rng.uniform(-2, 11, 500)
        assert ext.sample_bilinear(src, xs, ys).tobytes() == py.sample_bilinear(src, xs, ys).tobytes()
        assert ext.sample_nearest(src, xs, ys).tobytes() == py.sample_nearest(src, xs, ys).tobytes()

    def test_set_backend_switches_and_restores(self):
        prev = _backend.set_backend("python")
        try:
            assert _backend.BACKEND == "python"
        finally:
            _backend.set_backend(prev)
        with pytest.raises(ValueError):
            _backend.set_backend("fortran")


class TestFallback:
    def test_env_forces_python(self):
        code = "from energygan import _backend; print(_backend.BACKEND)"
        env = dict(os.environ, ENERGYGAN_BACKEND="python")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        assert out.stdout.strip() == "python"

    def test_python_kernels_match_loops(self):
        xp = np.arange(2 * 1 * 5 * 5, dtype=np.float64).reshape(2, 1, 5, 5)
        cols = _kernels_py.im2col(xp, 3, 2, 2, 2)
        # column index is n*oh*ow + oy*ow + ox; row index is c*k*k + ki*k + kj
        for n in range(2):
            for oy in range(2):
                for ox in range(2):
                    patch = xp[n, 0, 2 * oy:2 * oy + 3, 2 * ox:2 * ox + 3].ravel()
                    np.testing.assert_array_equal(cols[:, n * 4 + oy * 2 + ox], patch)

    def test_nonfinite_coordinates_read_zero(self):
        src = np.ones((3, 3, 1))
        out = _backend.sample_bilinear(src, [np.nan, np.inf, 1.0], [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(out[:, 0], [0.0, 0.0, 1.0])
