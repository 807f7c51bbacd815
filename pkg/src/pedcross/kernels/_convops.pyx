# cython: boundscheck=False, wraparound=False, cdivision=True
"""Depthwise 2-d convolution kernels (forward and both backward passes).

These cover the stride/dilation combinations used by the large-kernel
attention gates and the convolutional feed-forward blocks, where an
im2col + BLAS route wastes memory and time. Dense and pointwise
convolutions stay on the BLAS path and are not duplicated here.
"""

ctypedef fused real:
    float
    double


cpdef void dwconv2d_forward(real[:, :, :, ::1] x, real[:, :, ::1] w,
                            real[:, :, :, ::1] out,
                            int stride, int dilation,
                            int pad_h, int pad_w) noexcept nogil:
    cdef Py_ssize_t n_batch = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t oh = out.shape[2], ow = out.shape[3]
    cdef Py_ssize_t n, c, oy, ox, ky, kx, iy, ix, iy0, ix0
    cdef real acc

    for n in range(n_batch):
        for c in range(chans):
            for oy in range(oh):
                iy0 = oy * stride - pad_h
                for ox in range(ow):
                    ix0 = ox * stride - pad_w
                    acc = 0
                    for ky in range(kh):
                        iy = iy0 + ky * dilation
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ix0 + kx * dilation
                            if ix < 0 or ix >= wid:
                                continue
                            acc = acc + x[n, c, iy, ix] * w[c, ky, kx]
                    out[n, c, oy, ox] = acc


cpdef void dwconv2d_backward_x(real[:, :, :, ::1] gy, real[:, :, ::1] w,
                               real[:, :, :, ::1] gx,
                               int stride, int dilation,
                               int pad_h, int pad_w) noexcept nogil:
    cdef Py_ssize_t n_batch = gy.shape[0], chans = gy.shape[1]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t h = gx.shape[2], wid = gx.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t n, c, oy, ox, ky, kx, iy, ix, iy0, ix0
    cdef real g

    for n in range(n_batch):
        for c in range(chans):
            for oy in range(oh):
                iy0 = oy * stride - pad_h
                for ox in range(ow):
                    ix0 = ox * stride - pad_w
                    g = gy[n, c, oy, ox]
                    for ky in range(kh):
                        iy = iy0 + ky * dilation
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ix0 + kx * dilation
                            if ix < 0 or ix >= wid:
                                continue
                            gx[n, c, iy, ix] = gx[n, c, iy, ix] + g * w[c, ky, kx]


cpdef void dwconv2d_backward_w(real[:, :, :, ::1] gy, real[:, :, :, ::1] x,
                               real[:, :, ::1] gw,
                               int stride, int dilation,
                               int pad_h, int pad_w) noexcept nogil:
    cdef Py_ssize_t n_batch = gy.shape[0], chans = gy.shape[1]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t kh = gw.shape[1], kw = gw.shape[2]
    cdef Py_ssize_t n, c, oy, ox, ky, kx, iy, ix, iy0, ix0
    cdef real g

    for n in range(n_batch):
        for c in range(chans):
            for oy in range(oh):
                iy0 = oy * stride - pad_h
                for ox in range(ow):
                    ix0 = ox * stride - pad_w
                    g = gy[n, c, oy, ox]
                    for ky in range(kh):
                        iy = iy0 + ky * dilation
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ix0 + kx * dilation
                            if ix < 0 or ix >= wid:
                                continue
                            gw[c, ky, kx] = gw[c, ky, kx] + g * x[n, c, iy, ix]
