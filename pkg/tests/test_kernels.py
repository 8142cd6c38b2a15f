"""The numba backend and the numpy fallback must agree on every kernel."""

import numpy as np
import pytest

from stlca.kernels import numpy_backend

numba_backend = pytest.importorskip("stlca.kernels.numba_backend")


def _pad(x, p):
    if p == 0:
        return x
    c, h, w = x.shape
    xp = np.zeros((c, h + 2 * p, w + 2 * p))
    xp[:, p : p + h, p : p + w] = x
    return xp


@pytest.mark.parametrize("stride,dil,pad", [(1, 1, 1), (2, 1, 1), (1, 4, 4), (2, 2, 0)])
def test_im2col_col2im_agree(stride, dil, pad):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 10, 12))
    kh = kw = 3
    xp = _pad(x, pad)
    oh = (xp.shape[1] - dil * (kh - 1) - 1) // stride + 1
    ow = (xp.shape[2] - dil * (kw - 1) - 1) // stride + 1
    a = numpy_backend.im2col(xp, kh, kw, stride, dil, oh, ow)
    b = numba_backend.im2col(xp, kh, kw, stride, dil, oh, ow)
    np.testing.assert_array_equal(a, b)
    dcols = rng.standard_normal(a.shape)
    da = numpy_backend.col2im(dcols, 3, xp.shape[1], xp.shape[2], kh, kw, stride, dil, oh, ow)
    db = numba_backend.col2im(dcols, 3, xp.shape[1], xp.shape[2], kh, kw, stride, dil, oh, ow)
    np.testing.assert_allclose(da, db, atol=1e-12)


@pytest.mark.parametrize("oh,ow", [(5, 7), (12, 3), (1, 1), (10, 12)])
def test_resize_agree(oh, ow):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 10, 12))
    np.testing.assert_allclose(
        numpy_backend.resize_bilinear_fwd(x, oh, ow),
        numba_backend.resize_bilinear_fwd(x, oh, ow),
        atol=1e-13,
    )
    dout = rng.standard_normal((2, oh, ow))
    np.testing.assert_allclose(
        numpy_backend.resize_bilinear_bwd(dout, 10, 12),
        numba_backend.resize_bilinear_bwd(dout, 10, 12),
        atol=1e-13,
    )


def test_warp_agree():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 9, 9))
    flow = rng.uniform(-3, 3, size=(9, 9, 2))
    np.testing.assert_allclose(
        numpy_backend.warp_bilinear_fwd(x, flow),
        numba_backend.warp_bilinear_fwd(x, flow),
        atol=1e-13,
    )
    dout = rng.standard_normal((3, 9, 9))
    np.testing.assert_allclose(
        numpy_backend.warp_bilinear_bwd(dout, flow, 9, 9),
        numba_backend.warp_bilinear_bwd(dout, flow, 9, 9),
        atol=1e-13,
    )
