"""Differentiable network operations built on the autograd core.

Everything here is a primitive with a hand-written backward pass (norms,
activations, convolution) or a thin composition of autograd ops
(attention). All primitives are exercised by the finite-difference suite.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf as _erf

from . import kernels
from .autograd import Tensor, _make, _unbroadcast, concat, matmul

INV_SQRT2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w (+ b) over the trailing feature axis."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(
            f"linear: input feature size {x.shape} does not match weight "
            f"{w.shape}")
    flat = x.ndim > 2
    xm = x.reshape(-1, x.shape[-1]) if flat else x
    y = matmul(xm, w)
    if b is not None:
        y = y + b
    if flat:
        y = y.reshape(*x.shape[:-1], w.shape[1])
    return y


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU."""
    cdf = 0.5 * (1.0 + _erf(x.data * INV_SQRT2))

    def backward(g):
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) * INV_SQRT_2PI
            x._accumulate(g * (cdf + x.data * pdf))

    return _make(x.data * cdf, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate(y * (g - inner))

    return _make(y, (x,), backward)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor,
                                 mask: Tensor | None = None) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v over the last two axes ([..., n, d]).

    Queries and keys may differ in sequence length (cross-attention);
    keys and values must match exactly.
    """
    n, d = q.shape[-2], q.shape[-1]
    if n == 0 or d == 0 or k.shape[-2] == 0:
        raise ValueError(f"attention over empty tensor: q {q.shape}, "
                         f"k {k.shape}")
    if k.shape != v.shape or k.shape[-1] != d or q.shape[:-2] != k.shape[:-2]:
        raise ValueError(
            f"attention operands disagree: {q.shape}, {k.shape}, {v.shape}")
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    if mask is not None:
        scores = scores + mask
    return matmul(softmax(scores, axis=-1), v)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if gamma.requires_grad:
            gamma._accumulate(
                (g * xhat).reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx_hat = g * gamma.data
            m1 = gx_hat.mean(axis=-1, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx_hat - m1 - xhat * m2))

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def batch_norm_2d(x: Tensor, gamma: Tensor, beta: Tensor,
                  running_mean: np.ndarray, running_var: np.ndarray,
                  training: bool, momentum: float = 0.1,
                  eps: float = 1e-5) -> Tensor:
    """Channel batch-norm for [N,C,H,W]; frozen running stats in eval mode."""
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbias = m / max(m - 1, 1)
        running_var *= 1.0 - momentum
        running_var += momentum * var * unbias
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).reshape(shape)
    xhat = (x.data - mu.reshape(shape)) * inv

    def backward(g):
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if x.requires_grad:
            gx_hat = g * gamma.data.reshape(shape)
            if training:
                m1 = gx_hat.mean(axis=axes, keepdims=True)
                m2 = (gx_hat * xhat).mean(axis=axes, keepdims=True)
                x._accumulate(inv * (gx_hat - m1 - xhat * m2))
            else:
                x._accumulate(inv * gx_hat)

    return _make(xhat * gamma.data.reshape(shape) + beta.data.reshape(shape),
                 (x, gamma, beta), backward)


# -- convolution --------------------------------------------------------

def _same_padding(kernel: int, dilation: int) -> int:
    if kernel % 2 == 0:
        raise ValueError(f"'same' padding requires an odd kernel, got {kernel}")
    return dilation * (kernel - 1) // 2


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           dilation: int = 1, groups: int = 1, padding="same") -> Tensor:
    """2-d convolution; x [N,Cin,H,W] (or [Cin,H,W]), w [Cout,Cin/g,kh,kw].

    Depthwise cases route through the kernel backend; everything else
    uses im2col + matmul.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape(1, *x.shape)
    n, c_in, h, wid = x.shape
    c_out, c_in_g, kh, kw = w.shape
    if c_in % groups or c_out % groups:
        raise ValueError(
            f"groups={groups} must divide c_in={c_in} and c_out={c_out}")
    if c_in_g != c_in // groups:
        raise ValueError(
            f"weight shape {w.shape} inconsistent with c_in={c_in}, "
            f"groups={groups}")
    if padding == "same":
        if stride != 1:
            raise ValueError("'same' padding is defined for stride 1 only")
        pad_h, pad_w = _same_padding(kh, dilation), _same_padding(kw, dilation)
    elif isinstance(padding, tuple):
        pad_h, pad_w = padding
    else:
        pad_h = pad_w = int(padding)
    if dilation * (kh - 1) + 1 > h + 2 * pad_h or \
            dilation * (kw - 1) + 1 > wid + 2 * pad_w:
        raise ValueError(
            f"kernel {kh}x{kw} (dilation {dilation}) exceeds padded input "
            f"{h + 2 * pad_h}x{wid + 2 * pad_w}")

    depthwise = groups == c_in and c_out == c_in and c_in > 0
    if depthwise:
        out = _dwconv(x, w, stride, dilation, pad_h, pad_w)
    else:
        out = _dense_conv(x, w, stride, dilation, groups, pad_h, pad_w)
    if b is not None:
        out = out + b.reshape(1, c_out, 1, 1)
    if squeeze:
        out = out.reshape(*out.shape[1:])
    return out


def _dwconv(x: Tensor, w: Tensor, stride, dilation, pad_h, pad_w) -> Tensor:
    w2 = w.data.reshape(w.shape[0], w.shape[2], w.shape[3])
    y = kernels.dwconv2d_forward(x.data, w2, stride, dilation, pad_h, pad_w)
    in_h, in_w = x.shape[2], x.shape[3]

    def backward(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x._accumulate(kernels.dwconv2d_backward_x(
                g, w2, in_h, in_w, stride, dilation, pad_h, pad_w))
        if w.requires_grad:
            gw = kernels.dwconv2d_backward_w(
                g, x.data, w.shape[2], w.shape[3], stride, dilation,
                pad_h, pad_w)
            w._accumulate(gw.reshape(w.shape))

    return _make(y, (x, w), backward)


def _im2col_indices(c, h, wid, kh, kw, stride, dilation, pad_h, pad_w):
    """Flat indices of every (channel, window, tap) into the padded image."""
    hp, wp = h + 2 * pad_h, wid + 2 * pad_w
    oh = kernels.conv_out_size(h, kh, stride, dilation, pad_h)
    ow = kernels.conv_out_size(wid, kw, stride, dilation, pad_w)
    ci = np.repeat(np.arange(c), kh * kw)                    # [c*kh*kw]
    ky, kx = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    rows = (oy.reshape(-1, 1) * stride +
            np.tile(ky.reshape(-1) * dilation, c))           # [L, c*kh*kw]
    cols = (ox.reshape(-1, 1) * stride +
            np.tile(kx.reshape(-1) * dilation, c))
    flat = ci[None, :] * (hp * wp) + rows * wp + cols
    return flat, oh, ow, hp, wp


def _dense_conv(x: Tensor, w: Tensor, stride, dilation, groups,
                pad_h, pad_w) -> Tensor:
    n, c_in, h, wid = x.shape
    c_out, c_in_g, kh, kw = w.shape
    idx, oh, ow, hp, wp = _im2col_indices(
        c_in_g, h, wid, kh, kw, stride, dilation, pad_h, pad_w)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    outs, cols_per_group = [], []
    o_g = c_out // groups
    for gi in range(groups):
        xg = xp[:, gi * c_in_g:(gi + 1) * c_in_g].reshape(n, -1)
        cols = xg[:, idx]                                    # [N, L, c_in_g*kh*kw]
        wg = w.data[gi * o_g:(gi + 1) * o_g].reshape(o_g, -1)
        outs.append(np.matmul(cols, wg.T))                   # [N, L, o_g]
        cols_per_group.append(cols)
    y = np.concatenate(outs, axis=2).transpose(0, 2, 1).reshape(n, c_out, oh, ow)

    def backward(g):
        g2 = g.reshape(n, c_out, -1).transpose(0, 2, 1)      # [N, L, c_out]
        gxp = np.zeros((n, c_in * hp * wp), dtype=x.dtype) \
            if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for gi in range(groups):
            gg = g2[:, :, gi * o_g:(gi + 1) * o_g]
            if w.requires_grad:
                cols = cols_per_group[gi]
                gw_flat = np.tensordot(gg, cols, axes=([0, 1], [0, 1]))
                gw[gi * o_g:(gi + 1) * o_g] = gw_flat.reshape(o_g, c_in_g, kh, kw)
            if x.requires_grad:
                wg = w.data[gi * o_g:(gi + 1) * o_g].reshape(o_g, -1)
                gcols = np.matmul(gg, wg)                    # [N, L, c_in_g*kh*kw]
                base = gi * c_in_g * hp * wp
                np.add.at(gxp,
                          (np.arange(n)[:, None], (idx + base).reshape(-1)[None, :]),
                          gcols.reshape(n, -1))
        if w.requires_grad:
            w._accumulate(gw)
        if x.requires_grad:
            full = gxp.reshape(n, c_in, hp, wp)
            x._accumulate(np.ascontiguousarray(
                full[:, :, pad_h:pad_h + h, pad_w:pad_w + wid]))

    return _make(y, (x, w), backward)


__all__ = [
    "linear", "gelu", "softmax", "scaled_dot_product_attention",
    "layer_norm", "batch_norm_2d", "conv2d", "concat",
]
