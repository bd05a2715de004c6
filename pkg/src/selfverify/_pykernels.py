"""Pure-numpy fallback for the compiled kernels in ``_ckernels.pyx``.

Same signatures and semantics: NCHW activations, (out, in, kh, kw) weights,
maxpool argmax as the flat ``h * w`` index of the first (row-major) maximum.
"""

import numpy as np

# Per-call overhead dominates on small inputs, so everything below is built from
# plain strided slices (one per kernel tap) rather than np.pad or window views.


def _tap(x, i, j, oh, ow, stride):
    return x[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride]


def conv2d_forward(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    kh, kw = w.shape[2], w.shape[3]
    if pad:
        padded = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
        padded[:, :, pad:pad + h, pad:pad + wd] = x
        x = padded
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    # im2col rows ordered (n, oh, ow), columns (c, kh, kw)
    cols = np.empty((n, oh, ow, c, kh, kw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[..., i, j] = _tap(x, i, j, oh, ow, stride).transpose(0, 2, 3, 1)
    cols = cols.reshape(n * oh * ow, c * kh * kw)
    out = cols @ w.reshape(len(w), -1).T
    out += b
    return np.ascontiguousarray(out.reshape(n, oh, ow, -1).transpose(0, 3, 1, 2), dtype=x.dtype)


def conv2d_backward_input(gout, w, h, wd, stride, pad):
    n, o, oh, ow = gout.shape
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    gpad = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=gout.dtype)
    # scatter one kernel tap at a time
    rows = gout.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
    contrib = (rows @ w.reshape(o, -1)).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            gpad[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += contrib[:, :, i, j]
    return np.ascontiguousarray(gpad[:, :, pad:pad + h, pad:pad + wd])


def maxpool_forward(x, size, stride):
    n, c, h, wd = x.shape
    oh = (h - size) // stride + 1
    ow = (wd - size) // stride + 1
    taps = np.stack([_tap(x, i, j, oh, ow, stride) for i in range(size) for j in range(size)])
    local = taps.argmax(axis=0)  # first maximum in row-major tap order
    out = np.take_along_axis(taps, local[None], axis=0)[0]
    ky, kx = np.divmod(local, size)
    rows = np.arange(oh)[:, None] * stride + ky
    cols = np.arange(ow)[None, :] * stride + kx
    idx = (rows * wd + cols).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool_backward(gout, idx, h, wd):
    n, c = gout.shape[:2]
    gin = np.zeros((n, c, h * wd), dtype=gout.dtype)
    flat_idx = idx.reshape(n, c, -1)
    np.add.at(gin, (np.arange(n)[:, None, None], np.arange(c)[None, :, None], flat_idx),
              gout.reshape(n, c, -1))
    return gin.reshape(n, c, h, wd)
