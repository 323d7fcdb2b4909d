"""Dispatch layer over the numba and numpy kernel implementations.

The active backend is chosen once at import from `CONTAMINET_BACKEND` (see
`contaminet.backend`); `select()` switches it at runtime, which the tests and
the benchmark use to compare the two paths.
"""

from .. import backend as _backend
from ..errors import ConfigError
from . import numpy_kernels

_IMPLS = {"numpy": numpy_kernels}
if _backend.HAS_NUMBA:
    from . import numba_kernels

    _IMPLS["numba"] = numba_kernels

_active_name = _backend.default_backend()


def active_name() -> str:
    return _active_name


def select(name: str) -> str:
    """Switch the active backend; returns the previous one."""
    global _active_name
    if name not in _IMPLS:
        raise ConfigError(f"unknown kernel backend {name!r}; have {sorted(_IMPLS)}")
    previous = _active_name
    _active_name = name
    return previous


def available() -> tuple:
    return tuple(sorted(_IMPLS))


def conv2d_forward(xp, w, b, stride):
    return _IMPLS[_active_name].conv2d_forward(xp, w, b, stride)


def conv2d_input_grad(gy, w, stride, hp, wp):
    return _IMPLS[_active_name].conv2d_input_grad(gy, w, stride, hp, wp)


def conv2d_weight_grad(xp, gy, stride, kh, kw):
    return _IMPLS[_active_name].conv2d_weight_grad(xp, gy, stride, kh, kw)


def maxpool_forward(x, window, stride):
    return _IMPLS[_active_name].maxpool_forward(x, window, stride)


def maxpool_input_grad(gy, idx, h, w):
    return _IMPLS[_active_name].maxpool_input_grad(gy, idx, h, w)


def resize_bilinear(img, out_h, out_w):
    return _IMPLS[_active_name].resize_bilinear(img, out_h, out_w)


def rotate_bilinear(img, angle_rad):
    return _IMPLS[_active_name].rotate_bilinear(img, angle_rad)
