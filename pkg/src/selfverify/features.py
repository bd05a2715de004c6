"""Per-sample quantities shared by profiling and detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cam import CropConfig, class_weights, locate_and_crop, saliency
from .errors import SelfVerifyError
from .metrics import last_conv_distribution
from .network import Network, last_conv_batch
from .spectral import DEFAULT_SIZE, BinaryFrequencyPattern, frequency_pattern

BATCH = 64


@dataclass
class SampleFeatures:
    predicted: int
    logits: np.ndarray
    distribution: np.ndarray                     # per-channel mean |A_k|
    crop_box: tuple | None = None
    pattern: BinaryFrequencyPattern | None = None
    pattern_error: SelfVerifyError | None = None
    saliency: np.ndarray | None = None           # upsampled map, kept only on request


def analyze(net: Network, xs, modality="image", crop=CropConfig(), pattern_size=DEFAULT_SIZE,
            keep_saliency=False, batch=BATCH):
    """Run the network over ``xs`` in fixed-size chunks and extract per-sample features.

    The crop/frequency pattern is computed only for image modality.
    """
    xs = np.asarray(xs)
    hw = tuple(net.input_shape[-2:])
    out = []
    for start in range(0, len(xs), batch):
        logits, maps = last_conv_batch(net, xs[start:start + batch])
        dists = last_conv_distribution(maps)
        for j in range(len(logits)):
            pred = int(np.argmax(logits[j]))
            feat = SampleFeatures(pred, logits[j], dists[j])
            if modality == "image":
                weights = class_weights(net, pred) if crop.weighted_by_class else None
                smap = saliency(maps[j], hw, weights)
                if keep_saliency:
                    feat.saliency = smap.upsampled
                try:
                    region = locate_and_crop(xs[start + j], smap, crop)
                    feat.crop_box = region.box
                    feat.pattern = frequency_pattern(region.pattern, pattern_size)
                except SelfVerifyError as exc:
                    feat.pattern_error = exc
            out.append(feat)
    return out
