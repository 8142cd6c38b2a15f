"""Numba-jitted kernel implementations (default backend).

All loops are serial and owner-computes, so results are bit-reproducible
across runs regardless of the numba threading layer.  fastmath stays off in
the bilinear kernels: warping by an integer-valued field must reproduce
source pixels exactly.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(xp, kh, kw, stride, dilation, oh, ow):
    ci = xp.shape[0]
    cols = np.empty((ci * kh * kw, oh * ow), np.float64)
    r = 0
    for ic in range(ci):
        for ky in range(kh):
            for kx in range(kw):
                ix0 = kx * dilation
                for oy in range(oh):
                    iy = ky * dilation + oy * stride
                    base = oy * ow
                    for ox in range(ow):
                        cols[r, base + ox] = xp[ic, iy, ix0 + ox * stride]
                r += 1
    return cols


@njit(cache=True)
def col2im(dcols, ci, hp, wp, kh, kw, stride, dilation, oh, ow):
    dxp = np.zeros((ci, hp, wp), np.float64)
    r = 0
    for ic in range(ci):
        for ky in range(kh):
            for kx in range(kw):
                ix0 = kx * dilation
                for oy in range(oh):
                    iy = ky * dilation + oy * stride
                    base = oy * ow
                    for ox in range(ow):
                        dxp[ic, iy, ix0 + ox * stride] += dcols[r, base + ox]
                r += 1
    return dxp


@njit(cache=True)
def resize_bilinear_fwd(x, oh, ow):
    c, ih, iw = x.shape
    out = np.empty((c, oh, ow), np.float64)
    scale_y = (ih - 1.0) / (oh - 1.0) if oh > 1 else 0.0
    scale_x = (iw - 1.0) / (ow - 1.0) if ow > 1 else 0.0
    for oy in range(oh):
        sy = oy * scale_y
        y0 = int(np.floor(sy))
        if y0 > ih - 1:
            y0 = ih - 1
        y1 = y0 + 1 if y0 + 1 < ih else ih - 1
        fy = sy - y0
        for ox in range(ow):
            sx = ox * scale_x
            x0 = int(np.floor(sx))
            if x0 > iw - 1:
                x0 = iw - 1
            x1 = x0 + 1 if x0 + 1 < iw else iw - 1
            fx = sx - x0
            for ch in range(c):
                top = x[ch, y0, x0] + (x[ch, y0, x1] - x[ch, y0, x0]) * fx
                bot = x[ch, y1, x0] + (x[ch, y1, x1] - x[ch, y1, x0]) * fx
                out[ch, oy, ox] = top + (bot - top) * fy
    return out


@njit(cache=True)
def resize_bilinear_bwd(dout, ih, iw):
    c, oh, ow = dout.shape
    dx = np.zeros((c, ih, iw), np.float64)
    scale_y = (ih - 1.0) / (oh - 1.0) if oh > 1 else 0.0
    scale_x = (iw - 1.0) / (ow - 1.0) if ow > 1 else 0.0
    for oy in range(oh):
        sy = oy * scale_y
        y0 = int(np.floor(sy))
        if y0 > ih - 1:
            y0 = ih - 1
        y1 = y0 + 1 if y0 + 1 < ih else ih - 1
        fy = sy - y0
        for ox in range(ow):
            sx = ox * scale_x
            x0 = int(np.floor(sx))
            if x0 > iw - 1:
                x0 = iw - 1
            x1 = x0 + 1 if x0 + 1 < iw else iw - 1
            fx = sx - x0
            for ch in range(c):
                g = dout[ch, oy, ox]
                dx[ch, y0, x0] += g * (1.0 - fy) * (1.0 - fx)
                dx[ch, y0, x1] += g * (1.0 - fy) * fx
                dx[ch, y1, x0] += g * fy * (1.0 - fx)
                dx[ch, y1, x1] += g * fy * fx
    return dx


@njit(cache=True)
def warp_bilinear_fwd(x, flow):
    c, ih, iw = x.shape
    out = np.empty((c, ih, iw), np.float64)
    for y in range(ih):
        for xx in range(iw):
            sy = y + flow[y, xx, 0]
            sx = xx + flow[y, xx, 1]
            if sy < 0.0:
                sy = 0.0
            elif sy > ih - 1.0:
                sy = ih - 1.0
            if sx < 0.0:
                sx = 0.0
            elif sx > iw - 1.0:
                sx = iw - 1.0
            y0 = int(np.floor(sy))
            x0 = int(np.floor(sx))
            if y0 > ih - 1:
                y0 = ih - 1
            if x0 > iw - 1:
                x0 = iw - 1
            y1 = y0 + 1 if y0 + 1 < ih else ih - 1
            x1 = x0 + 1 if x0 + 1 < iw else iw - 1
            fy = sy - y0
            fx = sx - x0
            for ch in range(c):
                top = x[ch, y0, x0] + (x[ch, y0, x1] - x[ch, y0, x0]) * fx
                bot = x[ch, y1, x0] + (x[ch, y1, x1] - x[ch, y1, x0]) * fx
                out[ch, y, xx] = top + (bot - top) * fy
    return out


@njit(cache=True)
def warp_bilinear_bwd(dout, flow, ih, iw):
    c = dout.shape[0]
    dx = np.zeros((c, ih, iw), np.float64)
    for y in range(ih):
        for xx in range(iw):
            sy = y + flow[y, xx, 0]
            sx = xx + flow[y, xx, 1]
            if sy < 0.0:
                sy = 0.0
            elif sy > ih - 1.0:
                sy = ih - 1.0
            if sx < 0.0:
                sx = 0.0
            elif sx > iw - 1.0:
                sx = iw - 1.0
            y0 = int(np.floor(sy))
            x0 = int(np.floor(sx))
            if y0 > ih - 1:
                y0 = ih - 1
            if x0 > iw - 1:
                x0 = iw - 1
            y1 = y0 + 1 if y0 + 1 < ih else ih - 1
            x1 = x0 + 1 if x0 + 1 < iw else iw - 1
            fy = sy - y0
            fx = sx - x0
            for ch in range(c):
                g = dout[ch, y, xx]
                dx[ch, y0, x0] += g * (1.0 - fy) * (1.0 - fx)
                dx[ch, y0, x1] += g * (1.0 - fy) * fx
                dx[ch, y1, x0] += g * fy * (1.0 - fx)
                dx[ch, y1, x1] += g * fy * fx
    return dx
