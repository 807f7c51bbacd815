"""Convolution kernel backends.

The compiled Cython extension handles depthwise convolutions (the hot
loops inside the large-kernel attention gates); a pure-numpy fallback is
selected automatically when the extension is missing or when
PEDCROSS_FORCE_NUMPY_KERNELS=1 is set. Dense/pointwise convolutions use
im2col + BLAS regardless of backend.
"""

import os

import numpy as np

from . import reference
from .reference import conv_out_size

try:
    from . import _convops
except ImportError:  # pragma: no cover - depends on build environment
    _convops = None

_FORCED_NUMPY = os.environ.get("PEDCROSS_FORCE_NUMPY_KERNELS") == "1"
_active = "numpy" if (_convops is None or _FORCED_NUMPY) else "compiled"


def active_backend() -> str:
    return _active


def available_backends() -> list:
    return ["numpy", "compiled"] if _convops is not None else ["numpy"]


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime (used by the backend benchmark)."""
    global _active
    if name not in ("numpy", "compiled"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "compiled" and _convops is None:
        raise RuntimeError("compiled kernel extension is not available")
    _active = name


def dwconv2d_forward(x, w, stride, dilation, pad_h, pad_w):
    if _active == "numpy":
        return reference.dwconv2d_forward(x, w, stride, dilation, pad_h, pad_w)
    n, c, h, wid = x.shape
    oh = conv_out_size(h, w.shape[1], stride, dilation, pad_h)
    ow = conv_out_size(wid, w.shape[2], stride, dilation, pad_w)
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    _convops.dwconv2d_forward(np.ascontiguousarray(x), np.ascontiguousarray(w),
                              out, stride, dilation, pad_h, pad_w)
    return out


def dwconv2d_backward_x(gy, w, in_h, in_w, stride, dilation, pad_h, pad_w):
    if _active == "numpy":
        return reference.dwconv2d_backward_x(gy, w, in_h, in_w, stride,
                                             dilation, pad_h, pad_w)
    gx = np.zeros((gy.shape[0], gy.shape[1], in_h, in_w), dtype=gy.dtype)
    _convops.dwconv2d_backward_x(np.ascontiguousarray(gy),
                                 np.ascontiguousarray(w), gx,
                                 stride, dilation, pad_h, pad_w)
    return gx


def dwconv2d_backward_w(gy, x, kh, kw, stride, dilation, pad_h, pad_w):
    if _active == "numpy":
        return reference.dwconv2d_backward_w(gy, x, kh, kw, stride, dilation,
                                             pad_h, pad_w)
    gw = np.zeros((gy.shape[1], kh, kw), dtype=gy.dtype)
    _convops.dwconv2d_backward_w(np.ascontiguousarray(gy),
                                 np.ascontiguousarray(x), gw,
                                 stride, dilation, pad_h, pad_w)
    return gw
