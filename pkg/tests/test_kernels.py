"""Backend parity: the numba kernels must agree with the numpy fallback."""

import subprocess
import sys

import numpy as np
import pytest

from iterseg import kernels
from iterseg.kernels import bilinear_coords, numpy_impl

numba_impl = pytest.importorskip("iterseg.kernels.numba_impl")


def _conv_case(seed, B=2, IC=3, OC=4, size=10, k=3, stride=2):
    rng = np.random.default_rng(seed)
    xp = rng.normal(size=(B, IC, size, size))
    kernel = rng.normal(size=(OC, IC, k, k))
    bias = rng.normal(size=OC)
    return xp, kernel, bias, stride


@pytest.mark.parametrize("seed", range(3))
def test_conv_forward_parity(seed):
    xp, kernel, bias, stride = _conv_case(seed)
    a = numpy_impl.conv2d_forward(xp, kernel, bias, stride)
    b = numba_impl.conv2d_forward(xp, kernel, bias, stride)
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_conv_backward_parity(seed):
    xp, kernel, bias, stride = _conv_case(seed)
    out = numpy_impl.conv2d_forward(xp, kernel, bias, stride)
    rng = np.random.default_rng(100 + seed)
    dout = rng.normal(size=out.shape)
    dk_a, db_a = numpy_impl.conv2d_backward_kernel(xp, dout, 3, 3, stride)
    dk_b, db_b = numba_impl.conv2d_backward_kernel(xp, dout, 3, 3, stride)
    np.testing.assert_allclose(dk_a, dk_b, atol=1e-12)
    np.testing.assert_allclose(db_a, db_b, atol=1e-12)
    dx_a = numpy_impl.conv2d_backward_input(dout, kernel, stride, 10, 10)
    dx_b = numba_impl.conv2d_backward_input(dout, kernel, stride, 10, 10)
    np.testing.assert_allclose(dx_a, dx_b, atol=1e-12)


def test_bilinear_forward_bitwise_parity():
    # The lerp is textually identical in both backends, so the forward
    # resize must agree to the last bit.
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 9, 5))
    y0, y1, fy = bilinear_coords(9, 16)
    x0, x1, fx = bilinear_coords(5, 12)
    a = numpy_impl.bilinear_forward(x, y0, y1, fy, x0, x1, fx)
    b = numba_impl.bilinear_forward(x, y0, y1, fy, x0, x1, fx)
    np.testing.assert_array_equal(a, b)


def test_bilinear_transpose_parity():
    rng = np.random.default_rng(8)
    g = rng.normal(size=(1, 2, 16, 12))
    y0, y1, fy = bilinear_coords(9, 16)
    x0, x1, fx = bilinear_coords(5, 12)
    a = numpy_impl.bilinear_transpose(g, y0, y1, fy, x0, x1, fx, 9, 5)
    b = numba_impl.bilinear_transpose(g, y0, y1, fy, x0, x1, fx, 9, 5)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_slic_assign_parity():
    rng = np.random.default_rng(9)
    color = rng.uniform(0, 255, size=(24, 24, 3))
    centers = np.column_stack([
        rng.uniform(0, 24, size=6),
        rng.uniform(0, 24, size=6),
        rng.uniform(0, 255, size=(6, 3)),
    ])
    la, da = numpy_impl.slic_assign(color, centers, 0.5, 9)
    lb, db = numba_impl.slic_assign(color, centers, 0.5, 9)
    np.testing.assert_array_equal(la, lb)
    np.testing.assert_allclose(da, db, atol=1e-12)


def test_bilinear_coords_contract():
    lo, hi, frac = bilinear_coords(4, 8)
    assert lo.shape == hi.shape == frac.shape == (8,)
    assert np.all(lo <= hi) and np.all(hi <= 3) and np.all(lo >= 0)
    assert np.all((frac >= 0) & (frac < 1))
    # Borders clamp: the edge output pixels put all weight on one texel.
    assert lo[0] == 0 and frac[0] == 0.0
    assert lo[-1] == hi[-1] == 3 and frac[-1] == 0.0


@pytest.mark.parametrize("value,ok", [("numpy", True), ("numba", True),
                                      ("auto", True), ("bogus", False)])
def test_backend_env_selection(value, ok):
    code = ("import iterseg.kernels as k; print(k.backend_name())")
    proc = subprocess.run([sys.executable, "-c", code],
                          env={"ITERSEG_KERNELS": value, "PATH": "/usr/bin:/bin"},
                          capture_output=True, text=True)
    if ok:
        assert proc.returncode == 0
        expected = value if value != "auto" else ("numba", "numpy")
        assert proc.stdout.strip() in expected
    else:
        assert proc.returncode != 0


def test_active_backend_reports_name():
    assert kernels.backend_name() in ("numba", "numpy")
