"""Pure-numpy kernel implementations (fallback backend).

Same contracts as :mod:`stlca.kernels.numba_backend`; see the package
docstring for the layout conventions.
"""

import numpy as np

# col2im scatter indices depend only on the geometry, so they are cached.
_COL2IM_INDEX_CACHE: dict[tuple, np.ndarray] = {}


def im2col(xp, kh, kw, stride, dilation, oh, ow):
    """Unfold a padded (C, Hp, Wp) array into a (C*kh*kw, oh*ow) matrix."""
    ci = xp.shape[0]
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(ci, kh, kw, oh, ow),
        strides=(s0, s1 * dilation, s2 * dilation, s1 * stride, s2 * stride),
    )
    return np.ascontiguousarray(view).reshape(ci * kh * kw, oh * ow)


def _col2im_indices(ci, hp, wp, kh, kw, stride, dilation, oh, ow):
    key = (ci, hp, wp, kh, kw, stride, dilation, oh, ow)
    idx = _COL2IM_INDEX_CACHE.get(key)
    if idx is None:
        ic, ky, kx = np.meshgrid(
            np.arange(ci), np.arange(kh), np.arange(kw), indexing="ij"
        )
        oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
        rows_y = ky.reshape(-1, 1) * dilation + oy.reshape(1, -1) * stride
        rows_x = kx.reshape(-1, 1) * dilation + ox.reshape(1, -1) * stride
        idx = (ic.reshape(-1, 1) * hp + rows_y) * wp + rows_x
        idx = np.ascontiguousarray(idx.reshape(ci * kh * kw, oh * ow))
        _COL2IM_INDEX_CACHE[key] = idx
    return idx


def col2im(dcols, ci, hp, wp, kh, kw, stride, dilation, oh, ow):
    """Fold a (C*kh*kw, oh*ow) gradient back onto the padded input."""
    idx = _col2im_indices(ci, hp, wp, kh, kw, stride, dilation, oh, ow)
    dxp = np.zeros(ci * hp * wp, dtype=np.float64)
    np.add.at(dxp, idx.ravel(), dcols.ravel())
    return dxp.reshape(ci, hp, wp)


def _bilinear_coords(src, limit):
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i0 = np.clip(i0, 0, limit - 1)
    i1 = np.minimum(i0 + 1, limit - 1)
    return i0, i1, frac


def resize_bilinear_fwd(x, oh, ow):
    """Resize (C, h, w) to (C, oh, ow); align-corners sampling."""
    c, ih, iw = x.shape
    sy = np.arange(oh) * ((ih - 1) / (oh - 1)) if oh > 1 else np.zeros(1)
    sx = np.arange(ow) * ((iw - 1) / (ow - 1)) if ow > 1 else np.zeros(1)
    y0, y1, fy = _bilinear_coords(sy, ih)
    x0, x1, fx = _bilinear_coords(sx, iw)
    fy = fy[:, None]
    fx = fx[None, :]
    tl = x[:, y0[:, None], x0[None, :]]
    tr = x[:, y0[:, None], x1[None, :]]
    bl = x[:, y1[:, None], x0[None, :]]
    br = x[:, y1[:, None], x1[None, :]]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return np.ascontiguousarray(top + (bot - top) * fy)


def resize_bilinear_bwd(dout, ih, iw):
    """Gradient of resize_bilinear_fwd with respect to its input."""
    c, oh, ow = dout.shape
    sy = np.arange(oh) * ((ih - 1) / (oh - 1)) if oh > 1 else np.zeros(1)
    sx = np.arange(ow) * ((iw - 1) / (ow - 1)) if ow > 1 else np.zeros(1)
    y0, y1, fy = _bilinear_coords(sy, ih)
    x0, x1, fx = _bilinear_coords(sx, iw)
    wy0 = (1.0 - fy)[:, None]
    wy1 = fy[:, None]
    wx0 = (1.0 - fx)[None, :]
    wx1 = fx[None, :]
    dx = np.zeros((c, ih, iw), dtype=np.float64)
    yy0 = np.broadcast_to(y0[:, None], (oh, ow))
    yy1 = np.broadcast_to(y1[:, None], (oh, ow))
    xx0 = np.broadcast_to(x0[None, :], (oh, ow))
    xx1 = np.broadcast_to(x1[None, :], (oh, ow))
    for ch in range(c):
        np.add.at(dx[ch], (yy0, xx0), dout[ch] * (wy0 * wx0))
        np.add.at(dx[ch], (yy0, xx1), dout[ch] * (wy0 * wx1))
        np.add.at(dx[ch], (yy1, xx0), dout[ch] * (wy1 * wx0))
        np.add.at(dx[ch], (yy1, xx1), dout[ch] * (wy1 * wx1))
    return dx


def _warp_coords(flow, ih, iw):
    yy, xx = np.meshgrid(np.arange(ih), np.arange(iw), indexing="ij")
    sy = np.clip(yy + flow[:, :, 0], 0.0, ih - 1.0)
    sx = np.clip(xx + flow[:, :, 1], 0.0, iw - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.clip(y0, 0, ih - 1)
    x0 = np.clip(x0, 0, iw - 1)
    y1 = np.minimum(y0 + 1, ih - 1)
    x1 = np.minimum(x0 + 1, iw - 1)
    return y0, y1, sy - y0, x0, x1, sx - x0


def warp_bilinear_fwd(x, flow):
    """Backward-warp (C, H, W) by a (H, W, 2) displacement field (dy, dx)."""
    c, ih, iw = x.shape
    y0, y1, fy, x0, x1, fx = _warp_coords(flow, ih, iw)
    tl = x[:, y0, x0]
    tr = x[:, y0, x1]
    bl = x[:, y1, x0]
    br = x[:, y1, x1]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return np.ascontiguousarray(top + (bot - top) * fy)


def warp_bilinear_bwd(dout, flow, ih, iw):
    """Gradient of warp_bilinear_fwd with respect to the warped array."""
    c = dout.shape[0]
    y0, y1, fy, x0, x1, fx = _warp_coords(flow, ih, iw)
    w_tl = (1.0 - fy) * (1.0 - fx)
    w_tr = (1.0 - fy) * fx
    w_bl = fy * (1.0 - fx)
    w_br = fy * fx
    dx = np.zeros((c, ih, iw), dtype=np.float64)
    for ch in range(c):
        np.add.at(dx[ch], (y0, x0), dout[ch] * w_tl)
        np.add.at(dx[ch], (y0, x1), dout[ch] * w_tr)
        np.add.at(dx[ch], (y1, x0), dout[ch] * w_bl)
        np.add.at(dx[ch], (y1, x1), dout[ch] * w_br)
    return dx
