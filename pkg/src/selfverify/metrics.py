"""Prediction-activation inconsistency and the last-conv activation distribution."""

import numpy as np

from .errors import ConstantDistribution, ShapeError


def last_conv_distribution(trace_or_maps):
    """Per-channel mean absolute activation of the last-conv stack.

    Accepts an :class:`~selfverify.network.ActivationTrace`, a (K, H, W)
    stack or a batched (N, K, H, W) stack.
    """
    maps = getattr(trace_or_maps, "last_conv", trace_or_maps)
    a = np.abs(np.asarray(maps, dtype=np.float64))
    return a.reshape(a.shape[:-2] + (-1,)).mean(axis=-1)


def pearson(a, b):
    """Population Pearson correlation; raises on zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"need equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ShapeError("need at least two entries")
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt((da * da).mean())
    sb = np.sqrt((db * db).mean())
    if sa == 0 or sb == 0:
        raise ConstantDistribution("zero variance in activation distribution")
    r = (da * db).mean() / (sa * sb)
    return float(min(1.0, max(-1.0, r)))


def activation_inconsistency(f_practical, f_expected):
    """``1 - PCC`` in [0, 2]."""
    return 1.0 - pearson(f_practical, f_expected)
