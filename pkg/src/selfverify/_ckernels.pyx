# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv/pool kernels. Layout is NCHW; weights are (out, in, kh, kw).

Convolutions run as im2col/col2im here plus a BLAS matrix product."""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


cdef void _im2col(const real[:, :, ::1] x, real[:, ::1] cols, Py_ssize_t kh, Py_ssize_t kw,
                  Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    # cols[(ic, ky, kx), (oy, ox)] = x[ic, oy*stride + ky - pad, ox*stride + kx - pad], zero outside
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t ic, ky, kx, oy, ox, iy, ix, row
    for ic in range(c):
        for ky in range(kh):
            for kx in range(kw):
                row = (ic * kh + ky) * kw + kx
                for oy in range(oh):
                    iy = oy * stride + ky - pad
                    if iy < 0 or iy >= h:
                        for ox in range(ow):
                            cols[row, oy * ow + ox] = 0
                        continue
                    for ox in range(ow):
                        ix = ox * stride + kx - pad
                        if ix < 0 or ix >= wd:
                            cols[row, oy * ow + ox] = 0
                        else:
                            cols[row, oy * ow + ox] = x[ic, iy, ix]


cdef void _col2im(const real[:, ::1] cols, real[:, :, ::1] gin, Py_ssize_t kh, Py_ssize_t kw,
                  Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    cdef Py_ssize_t c = gin.shape[0], h = gin.shape[1], wd = gin.shape[2]
    cdef Py_ssize_t ic, ky, kx, oy, ox, iy, ix, row
    for ic in range(c):
        for ky in range(kh):
            for kx in range(kw):
                row = (ic * kh + ky) * kw + kx
                for oy in range(oh):
                    iy = oy * stride + ky - pad
                    if iy < 0 or iy >= h:
                        continue
                    for ox in range(ow):
                        ix = ox * stride + kx - pad
                        if ix >= 0 and ix < wd:
                            gin[ic, iy, ix] += cols[row, oy * ow + ox]


def im2col(const real[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    """(n, c*kh*kw, oh*ow) patch matrix, zero-padded."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.empty((n, c * kh * kw, oh * ow), dtype=dtype)
    cdef real[:, :, ::1] cols = cols_arr
    cdef Py_ssize_t bi
    with nogil:
        for bi in range(n):
            _im2col(x[bi], cols[bi], kh, kw, stride, pad, oh, ow)
    return cols_arr


def col2im(const real[:, :, ::1] cols, int c, int h, int wd, int kh, int kw, int stride, int pad):
    """Adjoint of :func:`im2col`: scatter-add patch columns back to (n, c, h, w)."""
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    gin_arr = np.zeros((n, c, h, wd), dtype=dtype)
    cdef real[:, :, :, ::1] gin = gin_arr
    cdef Py_ssize_t bi
    with nogil:
        for bi in range(n):
            _col2im(cols[bi], gin[bi], kh, kw, stride, pad, oh, ow)
    return gin_arr


def conv2d_forward(x, w, b, int stride, int pad):
    n, o = x.shape[0], w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    cols = im2col(np.ascontiguousarray(x), kh, kw, stride, pad)
    oh = (x.shape[2] + 2 * pad - kh) // stride + 1
    ow = (x.shape[3] + 2 * pad - kw) // stride + 1
    out = np.matmul(w.reshape(o, -1), cols)
    out += b[None, :, None]
    return out.reshape(n, o, oh, ow)


def conv2d_backward_input(gout, w, int h, int wd, int stride, int pad):
    n, o, oh, ow = gout.shape
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    dcols = np.matmul(w.reshape(o, -1).T, np.ascontiguousarray(gout).reshape(n, o, oh * ow))
    return col2im(np.ascontiguousarray(dcols), c, h, wd, kh, kw, stride, pad)


def maxpool_forward(const real[:, :, :, ::1] x, int size, int stride):
    """Returns (out, argmax) where argmax is the flat h*w index of the first maximum."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oh = (h - size) // stride + 1
    cdef Py_ssize_t ow = (wd - size) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    idx_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t bi, ch, oy, ox, ky, kx, iy, ix, best_i
    cdef real best, v
    with nogil:
        for bi in range(n):
            for ch in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        iy = oy * stride
                        ix = ox * stride
                        best = x[bi, ch, iy, ix]
                        best_i = iy * wd + ix
                        for ky in range(size):
                            for kx in range(size):
                                v = x[bi, ch, iy + ky, ix + kx]
                                if v > best:
                                    best = v
                                    best_i = (iy + ky) * wd + ix + kx
                        out[bi, ch, oy, ox] = best
                        idx[bi, ch, oy, ox] = best_i
    return out_arr, idx_arr


def maxpool_backward(const real[:, :, :, ::1] gout, const cnp.int64_t[:, :, :, ::1] idx, int h, int wd):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1], oh = gout.shape[2], ow = gout.shape[3]
    dtype = np.float32 if real is float else np.float64
    gin_arr = np.zeros((n, c, h, wd), dtype=dtype)
    cdef real[:, :, :, ::1] gin = gin_arr
    cdef Py_ssize_t bi, ch, oy, ox, k
    with nogil:
        for bi in range(n):
            for ch in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        k = idx[bi, ch, oy, ox]
                        gin[bi, ch, k // wd, k % wd] += gout[bi, ch, oy, ox]
    return gin_arr
