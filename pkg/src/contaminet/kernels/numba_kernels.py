"""Numba-jitted loop nests for the hot kernels.

Same signatures and sampling conventions as `numpy_kernels`.  Parallel loops
run only over axes with disjoint output slices (batch index, filter index,
output row), so results are bitwise independent of the thread count.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def conv2d_forward(xp, w, b, stride):
    n, c, hp, wp = xp.shape
    f, _, kh, kw = w.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.empty((n, f, ho, wo))
    for i in prange(n):
        for ff in range(f):
            for oh in range(ho):
                for ow in range(wo):
                    acc = b[ff]
                    for cc in range(c):
                        for r in range(kh):
                            for s in range(kw):
                                acc += xp[i, cc, oh * stride + r, ow * stride + s] * w[ff, cc, r, s]
                    out[i, ff, oh, ow] = acc
    return out


@njit(cache=True, parallel=True)
def conv2d_input_grad(gy, w, stride, hp, wp):
    n, f, ho, wo = gy.shape
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    gxp = np.zeros((n, c, hp, wp))
    for i in prange(n):
        for ff in range(f):
            for oh in range(ho):
                for ow in range(wo):
                    g = gy[i, ff, oh, ow]
                    for cc in range(c):
                        for r in range(kh):
                            for s in range(kw):
                                gxp[i, cc, oh * stride + r, ow * stride + s] += g * w[ff, cc, r, s]
    return gxp


@njit(cache=True, parallel=True)
def conv2d_weight_grad(xp, gy, stride, kh, kw):
    n, c = xp.shape[0], xp.shape[1]
    f, ho, wo = gy.shape[1], gy.shape[2], gy.shape[3]
    gw = np.zeros((f, c, kh, kw))
    for ff in prange(f):
        for i in range(n):
            for oh in range(ho):
                for ow in range(wo):
                    g = gy[i, ff, oh, ow]
                    for cc in range(c):
                        for r in range(kh):
                            for s in range(kw):
                                gw[ff, cc, r, s] += g * xp[i, cc, oh * stride + r, ow * stride + s]
    return gw


@njit(cache=True, parallel=True)
def maxpool_forward(x, window, stride):
    n, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.empty((n, c, ho, wo))
    idx = np.empty((n, c, ho, wo), dtype=np.int64)
    for i in prange(n):
        for cc in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    best = x[i, cc, oh * stride, ow * stride]
                    best_at = (oh * stride) * w + ow * stride
                    for r in range(window):
                        for s in range(window):
                            v = x[i, cc, oh * stride + r, ow * stride + s]
                            if v > best:  # strict: first maximal cell wins ties
                                best = v
                                best_at = (oh * stride + r) * w + (ow * stride + s)
                    out[i, cc, oh, ow] = best
                    idx[i, cc, oh, ow] = best_at
    return out, idx


@njit(cache=True, parallel=True)
def maxpool_input_grad(gy, idx, h, w):
    n, c, ho, wo = gy.shape
    gx = np.zeros((n, c, h * w))
    for i in prange(n):
        for cc in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    gx[i, cc, idx[i, cc, oh, ow]] += gy[i, cc, oh, ow]
    return gx.reshape(n, c, h, w)


@njit(cache=True, parallel=True)
def resize_bilinear(img, out_h, out_w):
    h, w, ch = img.shape
    out = np.empty((out_h, out_w, ch))
    scale_y = h / out_h
    scale_x = w / out_w
    for oy in prange(out_h):
        sy = (oy + 0.5) * scale_y - 0.5
        y0 = int(np.floor(sy))
        ty = sy - y0
        ya = min(max(y0, 0), h - 1)
        yb = min(max(y0 + 1, 0), h - 1)
        for ox in range(out_w):
            sx = (ox + 0.5) * scale_x - 0.5
            x0 = int(np.floor(sx))
            tx = sx - x0
            xa = min(max(x0, 0), w - 1)
            xb = min(max(x0 + 1, 0), w - 1)
            for k in range(ch):
                top = img[ya, xa, k] * (1 - tx) + img[ya, xb, k] * tx
                bot = img[yb, xa, k] * (1 - tx) + img[yb, xb, k] * tx
                out[oy, ox, k] = top * (1 - ty) + bot * ty
    return out


@njit(cache=True, parallel=True)
def rotate_bilinear(img, angle_rad):
    h, w, ch = img.shape
    out = np.empty((h, w, ch))
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    cos_a = np.cos(angle_rad)
    sin_a = np.sin(angle_rad)
    for oy in prange(h):
        dy = oy - cy
        for ox in range(w):
            dx = ox - cx
            sy = cy + cos_a * dy + sin_a * dx
            sx = cx - sin_a * dy + cos_a * dx
            y0 = int(np.floor(sy))
            x0 = int(np.floor(sx))
            ty = sy - y0
            tx = sx - x0
            ya = min(max(y0, 0), h - 1)
            yb = min(max(y0 + 1, 0), h - 1)
            xa = min(max(x0, 0), w - 1)
            xb = min(max(x0 + 1, 0), w - 1)
            for k in range(ch):
                top = img[ya, xa, k] * (1 - tx) + img[ya, xb, k] * tx
                bot = img[yb, xa, k] * (1 - tx) + img[yb, xb, k] * tx
                out[oy, ox, k] = top * (1 - ty) + bot * ty
    return out
