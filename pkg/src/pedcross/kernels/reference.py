"""Pure-numpy depthwise convolution kernels.

This is the fallback backend when the compiled extension is unavailable,
and the reference the compiled kernels are tested against. Dense and
grouped convolutions go through im2col + BLAS in both backends (see
`pedcross.kernels`).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad_hw(x, pad_h, pad_w):
    if pad_h == 0 and pad_w == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))


def conv_out_size(size, kernel, stride, dilation, pad):
    return (size + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1


def _windows(x, kh, kw, stride, dilation, pad_h, pad_w):
    span_h = dilation * (kh - 1) + 1
    span_w = dilation * (kw - 1) + 1
    xp = _pad_hw(x, pad_h, pad_w)
    win = sliding_window_view(xp, (span_h, span_w), axis=(2, 3))
    return win[:, :, ::stride, ::stride, ::dilation, ::dilation]


def dwconv2d_forward(x, w, stride, dilation, pad_h, pad_w):
    """Depthwise convolution, x [N,C,H,W], w [C,kh,kw] -> [N,C,OH,OW]."""
    win = _windows(x, w.shape[1], w.shape[2], stride, dilation, pad_h, pad_w)
    return np.einsum("nchwij,cij->nchw", win, w)


def dwconv2d_backward_w(gy, x, kh, kw, stride, dilation, pad_h, pad_w):
    win = _windows(x, kh, kw, stride, dilation, pad_h, pad_w)
    return np.einsum("nchwij,nchw->cij", win, gy)


def dwconv2d_backward_x(gy, w, in_h, in_w, stride, dilation, pad_h, pad_w):
    """Gradient w.r.t. the input: zero-stuffed upsample + flipped-kernel conv."""
    n, c, oh, ow = gy.shape
    kh, kw = w.shape[1], w.shape[2]
    bp_h = dilation * (kh - 1) - pad_h
    bp_w = dilation * (kw - 1) - pad_w
    if bp_h < 0 or bp_w < 0:
        raise ValueError(
            f"padding ({pad_h},{pad_w}) exceeds the dilated kernel span; "
            "input gradient is not supported for over-padded convolutions")
    if stride > 1:
        up = np.zeros((n, c, (oh - 1) * stride + 1, (ow - 1) * stride + 1),
                      dtype=gy.dtype)
        up[:, :, ::stride, ::stride] = gy
    else:
        up = gy
    w_flip = np.ascontiguousarray(w[:, ::-1, ::-1])
    gx = dwconv2d_forward(up, w_flip, 1, dilation, bp_h, bp_w)
    # Rows/cols past the last forward window received no gradient.
    gx = gx[:, :, :in_h, :in_w]
    if gx.shape[2] < in_h or gx.shape[3] < in_w:
        gx = np.pad(gx, ((0, 0), (0, 0),
                         (0, in_h - gx.shape[2]), (0, in_w - gx.shape[3])))
    return gx
