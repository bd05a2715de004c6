"""The self-verification stage: predict, measure inconsistency against the predicted
class's profile, and flag the input when any active metric exceeds its threshold."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bundle import SampleSet
from .errors import MissingProfile, SelfVerifyError
from .features import BATCH, SampleFeatures, analyze
from .metrics import activation_inconsistency
from .network import Network
from .profiler import ProfileStore
from .reports import DetectionReport
from .spectral import semantic_inconsistency

IMAGE_THRESHOLD = 0.46
AUDIO_THRESHOLD = 0.11


@dataclass(frozen=True)
class Thresholds:
    semantic: float | None = IMAGE_THRESHOLD
    activation: float | None = AUDIO_THRESHOLD

    def __post_init__(self):
        for name in ("semantic", "activation"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValueError(f"{name} threshold must be >= 0, got {v}")


@dataclass(frozen=True)
class DetectorConfig:
    thresholds: Thresholds = field(default_factory=Thresholds)
    # images always report d_activation; this makes it part of the verdict too
    image_activation: bool = False


def active_metrics(modality, cfg: DetectorConfig):
    if modality == "image":
        return ("semantic", "activation") if cfg.image_activation else ("semantic",)
    return ("activation",)


def verify_features(feat: SampleFeatures, net: Network, store: ProfileStore,
                    cfg: DetectorConfig = DetectorConfig(), sample_id="input", **extra):
    """Build the report for one analysed sample. Raises MissingProfile."""
    label = net.class_labels[feat.predicted]
    if label not in store:
        raise MissingProfile(f"no profile for predicted class {label!r}")
    profile = store[label]
    active = active_metrics(store.modality, cfg)
    scores, errors = {}, {}

    if store.modality == "image":
        try:
            if feat.pattern_error is not None:
                raise feat.pattern_error
            expected = profile.pattern
            if expected is None:
                raise MissingProfile(f"profile {label!r} has no frequency pattern")
            scores["semantic"] = semantic_inconsistency(feat.pattern, expected)
        except SelfVerifyError as exc:
            errors["semantic"] = exc.code
    try:
        scores["activation"] = activation_inconsistency(feat.distribution, profile.f_exp)
    except SelfVerifyError as exc:
        errors["activation"] = exc.code

    thresholds = {m: getattr(cfg.thresholds, m) for m in active
                  if getattr(cfg.thresholds, m) is not None}
    # only failures of metrics that drive the verdict make it suspicious
    failed = [errors[m] for m in active if m in errors]
    if failed:
        verdict, reason = "suspicious", ",".join(failed)
    else:
        exceeded = any(m in scores and scores[m] > t for m, t in thresholds.items())
        verdict, reason = ("adversarial" if exceeded else "natural"), None
    return DetectionReport(sample_id, label, verdict, thresholds,
                           d_semantic=scores.get("semantic"),
                           d_activation=scores.get("activation"), reason=reason, **extra)


def classify_with_verification(net: Network, x, store: ProfileStore,
                               cfg: DetectorConfig = DetectorConfig(), sample_id="input"):
    """Classify one input and run the self-verification stage on it."""
    x = np.asarray(x)
    feat = analyze(net, x[None], store.modality, store.crop, store.pattern_size)[0]
    return verify_features(feat, net, store, cfg, sample_id)


def _item_extra(samples, i):
    meta = samples.meta[i]
    return {"label": samples.labels[i], "truth": meta.get("truth"), "attack": meta.get("attack"),
            "fooled": meta.get("fooled")}


def _detect_chunk(net, samples, store, cfg):
    feats = analyze(net, samples.items, store.modality, store.crop, store.pattern_size)
    reports = []
    for i, feat in enumerate(feats):
        extra = _item_extra(samples, i)
        try:
            reports.append(verify_features(feat, net, store, cfg, samples.ids[i], **extra))
        except MissingProfile as exc:
            reports.append(DetectionReport(samples.ids[i], net.class_labels[feat.predicted],
                                           "suspicious", reason=exc.code, **extra))
    return reports


_WORKER_STATE = None


def _init_worker(net, samples, store, cfg):
    global _WORKER_STATE
    _WORKER_STATE = (net, samples, store, cfg)


def _run_chunk(bounds):
    net, samples, store, cfg = _WORKER_STATE
    return _detect_chunk(net, samples.subset(range(*bounds)), store, cfg)


def default_workers():
    return os.cpu_count() or 1


def detect(net: Network, samples: SampleSet, store: ProfileStore,
           cfg: DetectorConfig = DetectorConfig(), workers=1):
    """Reports for every item, in input order. A missing profile yields a suspicious verdict.

    Items are processed in fixed chunks of ``BATCH`` regardless of ``workers``,
    so the output does not depend on the degree of parallelism.
    """
    chunks = [(i, min(i + BATCH, len(samples))) for i in range(0, len(samples), BATCH)]
    if workers <= 1 or len(chunks) <= 1:
        return [r for b in chunks for r in _detect_chunk(net, samples.subset(range(*b)), store, cfg)]
    with ProcessPoolExecutor(min(workers, len(chunks)), initializer=_init_worker,
                             initargs=(net, samples, store, cfg)) as pool:
        return [r for part in pool.map(_run_chunk, chunks) for r in part]
