"""Independent brute-force references used by the test suite.

Nothing here imports the package's compute paths.
"""

import itertools
import math

import numpy as np


def conv2d_naive(x, w, b, stride=1, pad=0):
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((o, oh, ow))
    for oc in range(o):
        for oy in range(oh):
            for ox in range(ow):
                s = float(b[oc])
                for ic in range(c):
                    for ky in range(kh):
                        for kx in range(kw):
                            iy, ix = oy * stride + ky - pad, ox * stride + kx - pad
                            if 0 <= iy < h and 0 <= ix < wd:
                                s += float(w[oc, ic, ky, kx]) * float(x[ic, iy, ix])
                out[oc, oy, ox] = s
    return out


def pool_naive(x, size, stride, op):
    sh, sw = size if isinstance(size, tuple) else (size, size)
    c, h, wd = x.shape
    oh, ow = (h - sh) // stride + 1, (wd - sw) // stride + 1
    out = np.zeros((c, oh, ow))
    for ch in range(c):
        for oy in range(oh):
            for ox in range(ow):
                win = [float(x[ch, oy * stride + i, ox * stride + j])
                       for i in range(sh) for j in range(sw)]
                out[ch, oy, ox] = max(win) if op == "max" else sum(win) / len(win)
    return out


def dense_naive(x, w, b):
    return np.array([sum(float(w[o, i]) * float(x[i]) for i in range(len(x))) + float(b[o])
                     for o in range(w.shape[0])])


def net_forward_naive(net, x):
    """Layer-by-layer reference forward for a :class:`Network`, float64 throughout."""
    h = np.asarray(x, dtype=np.float64)
    for layer, p in zip(net.spec.layers, net.params):
        if layer.kind == "conv2d":
            h = conv2d_naive(h, p["weight"], p["bias"], layer.stride, layer.padding)
        elif layer.kind == "relu":
            h = np.where(h > 0, h, 0.0)
        elif layer.kind == "maxpool2d":
            h = pool_naive(h, layer.size, layer.stride, "max")
        elif layer.kind == "avgpool2d":
            h = pool_naive(h, layer.size, layer.stride, "avg")
        elif layer.kind == "flatten":
            h = h.reshape(-1)
        elif layer.kind == "dense":
            h = dense_naive(h, p["weight"], p["bias"])
        elif layer.kind == "softmax":
            m = max(h)
            e = [math.exp(v - m) for v in h]
            h = np.array(e) / sum(e)
    return h


def central_difference(f, x, h=1e-4):
    """Central finite-difference gradient of scalar ``f`` at ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in itertools.product(*map(range, x.shape)):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def jaccard_sets(a, b):
    """Jaccard distance from explicit coordinate sets."""
    sa = {idx for idx, v in np.ndenumerate(a) if v}
    sb = {idx for idx, v in np.ndenumerate(b) if v}
    union = sa | sb
    return (len(union) - len(sa & sb)) / len(union)


def pearson_loops(a, b):
    n = len(a)
    ma = sum(a) / n
    mb = sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b)) / n
    va = sum((x - ma) ** 2 for x in a) / n
    vb = sum((y - mb) ** 2 for y in b) / n
    return cov / math.sqrt(va * vb)


def otsu_exhaustive(values, bins=256):
    """Between-class-variance threshold, trying every one of the bin edges in turn.

    Values are assigned to bins by counting the edges at or below them, and
    each bin contributes its centre value.
    """
    v = [float(t) for t in np.asarray(values).ravel()]
    lo, hi = min(v), max(v)
    width = (hi - lo) / bins
    edges = [lo + width * k for k in range(1, bins)]
    idx = [sum(1 for e in edges if e <= t) for t in v]
    centres = [lo + (i + 0.5) * width for i in idx]
    n = len(v)
    best_k, best_score = None, -1.0
    for k in range(1, bins):
        c0 = [c for c, i in zip(centres, idx) if i < k]
        c1 = [c for c, i in zip(centres, idx) if i >= k]
        if not c0 or not c1:
            continue
        w0, w1 = len(c0) / n, len(c1) / n
        m0, m1 = sum(c0) / len(c0), sum(c1) / len(c1)
        score = w0 * w1 * (m0 - m1) ** 2
        if score > best_score + 1e-15 * max(1.0, best_score):
            best_k, best_score = k, score
    return edges[best_k - 1]
