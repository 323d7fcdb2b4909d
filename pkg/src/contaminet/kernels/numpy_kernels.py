"""Pure-numpy implementations of the hot kernels.

Vectorized counterparts to the numba loop nests in `numba_kernels`; both
expose the same signatures and sampling conventions so they are drop-in
interchangeable.  All arrays are C-contiguous float64.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(xp, w, b, stride):
    """Cross-correlate a padded batch `xp` (n,c,hp,wp) with kernels (f,c,kh,kw)."""
    windows = sliding_window_view(xp, w.shape[2:], axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    out = np.einsum("nchwrs,fcrs->nfhw", windows, w, optimize=True)
    out += b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_input_grad(gy, w, stride, hp, wp):
    """Gradient w.r.t. the padded input; inverse scatter of the forward gather."""
    n = gy.shape[0]
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros((n, c, hp, wp))
    for r in range(kh):
        for s in range(kw):
            patch = np.einsum("fc,nfhw->nchw", w[:, :, r, s], gy, optimize=True)
            gxp[:, :, r : r + stride * ho : stride, s : s + stride * wo : stride] += patch
    return gxp


def conv2d_weight_grad(xp, gy, stride, kh, kw):
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    return np.ascontiguousarray(
        np.einsum("nchwrs,nfhw->fcrs", windows, gy, optimize=True)
    )


def maxpool_forward(x, window, stride):
    """Windowed max plus the flat (row-major) index of the first maximal cell."""
    n, c, h, w = x.shape
    views = sliding_window_view(x, (window, window), axis=(2, 3))
    views = views[:, :, ::stride, ::stride, :, :]
    ho, wo = views.shape[2], views.shape[3]
    flat = views.reshape(n, c, ho, wo, window * window)
    local = np.argmax(flat, axis=-1)  # first occurrence on ties
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    oy = np.arange(ho)[:, None] * stride + local // window
    ox = np.arange(wo)[None, :] * stride + local % window
    idx = (oy * w + ox).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool_input_grad(gy, idx, h, w):
    n, c = gy.shape[0], gy.shape[1]
    gx = np.zeros((n, c, h * w))
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(gx, (ni, ci, idx), gy)
    return gx.reshape(n, c, h, w)


def _clamped_corners(coord, limit):
    lo = np.floor(coord).astype(np.int64)
    frac = coord - lo
    lo0 = np.clip(lo, 0, limit - 1)
    lo1 = np.clip(lo + 1, 0, limit - 1)
    return lo0, lo1, frac


def resize_bilinear(img, out_h, out_w):
    """Bilinear resample of an (h,w,c) image; border samples clamp to the edge."""
    h, w = img.shape[0], img.shape[1]
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0, y1, ty = _clamped_corners(sy, h)
    x0, x1, tx = _clamped_corners(sx, w)
    ty = ty[:, None, None]
    tx = tx[None, :, None]
    top = img[y0[:, None], x0[None, :]] * (1 - tx) + img[y0[:, None], x1[None, :]] * tx
    bot = img[y1[:, None], x0[None, :]] * (1 - tx) + img[y1[:, None], x1[None, :]] * tx
    return np.ascontiguousarray(top * (1 - ty) + bot * ty)


def rotate_bilinear(img, angle_rad):
    """Rotate an (h,w,c) image about its center, edge-replicating out-of-frame samples."""
    h, w = img.shape[0], img.shape[1]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos_a, sin_a = np.cos(angle_rad), np.sin(angle_rad)
    dy = np.arange(h)[:, None] - cy
    dx = np.arange(w)[None, :] - cx
    src_y = cy + cos_a * dy + sin_a * dx
    src_x = cx - sin_a * dy + cos_a * dx
    y0, y1, ty = _clamped_corners(src_y, h)
    x0, x1, tx = _clamped_corners(src_x, w)
    ty = ty[..., None]
    tx = tx[..., None]
    top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
    bot = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
    return np.ascontiguousarray(top * (1 - ty) + bot * ty)
