"""Localize the input region behind the last-conv activations and crop it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroSaliency
from .imageio import resize_bilinear


@dataclass(frozen=True)
class CropConfig:
    alpha: float = 0.8          # keep cells with saliency >= alpha * max
    min_frac: float = 1 / 8     # minimum crop side as a fraction of the input side
    weighted_by_class: bool = False


@dataclass
class SaliencyMap:
    coarse: np.ndarray      # (h, w) at last-conv resolution
    upsampled: np.ndarray   # (H, W) at input resolution

    @property
    def argmax(self):
        return np.unravel_index(int(np.argmax(self.coarse)), self.coarse.shape)


@dataclass
class CropRegion:
    top: int
    left: int
    height: int
    width: int
    pattern: np.ndarray     # (C, height, width) slice of the input

    @property
    def box(self):
        return self.top, self.left, self.height, self.width


def channel_sum(maps):
    """Unweighted sum over the channel axis of a (..., K, h, w) stack."""
    return np.asarray(maps, dtype=np.float64).sum(axis=-3)


def class_weights(net, class_index):
    """CAM weights for a head of global pooling followed by one dense layer."""
    layers = net.spec.layers
    k = net.last_conv_shape[0]
    dense = [i for i in range(net.last_conv_index + 1, len(layers)) if layers[i].kind == "dense"]
    if len(dense) != 1 or net.params[dense[0]]["weight"].shape[1] != k:
        raise ValueError("class-weighted CAM needs a global-pool + single dense head")
    return np.asarray(net.params[dense[0]]["weight"][class_index], dtype=np.float64)


def saliency(trace_or_maps, input_hw, weights=None) -> SaliencyMap:
    maps = np.asarray(getattr(trace_or_maps, "last_conv", trace_or_maps), dtype=np.float64)
    if weights is None:
        coarse = channel_sum(maps)
    else:
        coarse = np.maximum(np.tensordot(np.asarray(weights, dtype=np.float64), maps, axes=(0, 0)), 0)
    return SaliencyMap(coarse, resize_bilinear(coarse, input_hw))


def _expand(lo, hi, min_len, bound):
    """Grow [lo, hi) symmetrically to at least min_len, then slide inside [0, bound)."""
    length = hi - lo
    if length < min_len:
        need = min_len - length
        lo -= need // 2
        hi += need - need // 2
    if lo < 0:
        hi, lo = hi - lo, 0
    if hi > bound:
        lo, hi = max(0, lo - (hi - bound)), bound
    return lo, hi


def locate_region(smap: SaliencyMap, cfg: CropConfig = CropConfig()):
    """(top, left, height, width) of the thresholded saliency bounding box."""
    up = smap.upsampled
    peak = up.max()
    if not peak > 0:
        raise AllZeroSaliency("saliency map is all zero")
    rows, cols = np.nonzero(up >= cfg.alpha * peak)
    H, W = up.shape
    top, bottom = _expand(rows.min(), rows.max() + 1, min(H, math.ceil(cfg.min_frac * H)), H)
    left, right = _expand(cols.min(), cols.max() + 1, min(W, math.ceil(cfg.min_frac * W)), W)
    return int(top), int(left), int(bottom - top), int(right - left)


def locate_and_crop(x, smap: SaliencyMap, cfg: CropConfig = CropConfig()) -> CropRegion:
    top, left, h, w = locate_region(smap, cfg)
    x = np.asarray(x)
    return CropRegion(top, left, h, w, x[..., top:top + h, left:left + w].copy())
