"""Input-semantic inconsistency on binarized, centred 2D spectra.

Pipeline per crop: grayscale (channel mean) -> bilinear resize to S x S ->
2D FFT -> quadrant swap so DC sits at (S//2, S//2) -> log(1 + |F|) ->
between-class-variance threshold over a 256-bin histogram -> boolean grid.
Two grids are compared with the Jaccard distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpectrum, EmptyUnion, ShapeError
from .imageio import resize_bilinear, to_grayscale

DEFAULT_SIZE = 64
HIST_BINS = 256


@dataclass(frozen=True)
class BinaryFrequencyPattern:
    bits: np.ndarray        # (S, S) bool
    threshold: float = float("nan")

    @property
    def size(self):
        return self.bits.shape[0]

    @property
    def count(self):
        return int(self.bits.sum())


def centered_spectrum(crop, size=DEFAULT_SIZE):
    """Complex 2D spectrum of the grayscale crop resized to ``size``, DC centred."""
    gray = to_grayscale(crop)
    if gray.shape != (size, size):
        gray = resize_bilinear(gray, (size, size))
    return np.fft.fftshift(np.fft.fft2(gray))


def fft2d_logmag(crop, size=DEFAULT_SIZE):
    return np.log1p(np.abs(centered_spectrum(crop, size)))


def otsu_threshold(values, bins=HIST_BINS):
    """Threshold maximising between-class variance of a ``bins``-bin histogram.

    Candidates are the interior bin edges; a value belongs to the upper class
    iff it is >= the chosen edge. Both classes are always non-empty.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = v.min(), v.max()
    if not hi > lo:
        raise DegenerateSpectrum("all values equal; no threshold separates them")
    width = (hi - lo) / bins
    edges = lo + width * np.arange(1, bins)
    idx = np.searchsorted(edges, v, side="right")
    hist = np.bincount(idx, minlength=bins).astype(np.float64)
    centres = lo + (np.arange(bins) + 0.5) * width
    n = v.size
    c0 = np.cumsum(hist)[:-1]
    s0 = np.cumsum(hist * centres)[:-1]
    c1 = n - c0
    s1 = (hist * centres).sum() - s0
    valid = (c0 > 0) & (c1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (c0 / n) * (c1 / n) * (s0 / c0 - s1 / c1) ** 2
    score = np.where(valid, score, -1.0)
    k = int(np.argmax(score))
    return float(edges[k])


def binarize_adaptive(grid, bins=HIST_BINS) -> BinaryFrequencyPattern:
    g = np.asarray(grid, dtype=np.float64)
    t = otsu_threshold(g, bins)
    return BinaryFrequencyPattern(g >= t, t)


def frequency_pattern(crop, size=DEFAULT_SIZE) -> BinaryFrequencyPattern:
    return binarize_adaptive(fft2d_logmag(crop, size))


def _bits(p):
    return p.bits if isinstance(p, BinaryFrequencyPattern) else np.asarray(p, dtype=bool)


def semantic_inconsistency(practical, expected):
    """Jaccard distance ``(|union| - |intersection|) / |union|`` in [0, 1]."""
    a, b = _bits(practical), _bits(expected)
    if a.shape != b.shape:
        raise ShapeError(f"pattern sizes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        raise EmptyUnion("both patterns are empty")
    inter = int(np.count_nonzero(a & b))
    return (union - inter) / union
