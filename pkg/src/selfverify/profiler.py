"""Per-class reference profiles built from a calibration set.

Samples are grouped by the model's *predicted* class, since that is all the
detector will know at inference time. The expected activation distribution is
the per-channel mean (exactly rounded, so independent of sample order); the
expected frequency pattern is a cell-wise majority vote with ties counted true.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bundle import SampleSet, model_hash, read_container, write_container
from .cam import CropConfig
from .errors import ConstantDistribution, ProfileError
from .features import analyze
from .metrics import activation_inconsistency
from .network import Network
from .spectral import DEFAULT_SIZE, BinaryFrequencyPattern

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProfileConfig:
    min_samples: int = 20
    crop: CropConfig = CropConfig()
    pattern_size: int = DEFAULT_SIZE


@dataclass
class ClassProfile:
    label: str
    f_exp: np.ndarray                 # float32 (K,)
    n: int
    votes: np.ndarray | None = None   # per-cell count of samples voting true
    n_patterns: int = 0               # samples that produced a pattern
    purity: float | None = None       # share of samples whose true label matches

    @property
    def vote_ratio(self):
        if self.votes is None or self.n_patterns == 0:
            return None
        return self.votes / self.n_patterns

    @property
    def pattern(self):
        if self.votes is None or self.n_patterns == 0:
            return None
        return BinaryFrequencyPattern(2 * self.votes >= self.n_patterns, 0.5)


@dataclass
class ProfileStore:
    profiles: dict
    modality: str
    provenance: dict = field(default_factory=dict)
    crop: CropConfig = CropConfig()
    pattern_size: int = DEFAULT_SIZE

    def __contains__(self, label):
        return label in self.profiles

    def __getitem__(self, label):
        return self.profiles[label]

    @property
    def labels(self):
        return list(self.profiles)


def exact_mean(rows):
    """Column means via exactly-rounded sums, so the result ignores row order."""
    rows = np.asarray(rows, dtype=np.float64)
    return np.array([math.fsum(col) for col in rows.T]) / len(rows)


def build_profiles(net: Network, calib: SampleSet, cfg: ProfileConfig = ProfileConfig()):
    if len(calib) == 0:
        raise ProfileError("calibration set is empty")
    if calib.item_shape != net.input_shape:
        raise ProfileError(f"calibration items {calib.item_shape} do not match model input "
                           f"{net.input_shape}")
    image = calib.modality == "image"
    feats = analyze(net, calib.items, calib.modality, cfg.crop, cfg.pattern_size)
    groups = {}
    for i, f in enumerate(feats):
        groups.setdefault(f.predicted, []).append(i)
    labels = net.class_labels
    profiles = {}
    counts = {}
    for cls in range(len(labels)):
        members = groups.get(cls, [])
        counts[labels[cls]] = len(members)
        if len(members) < cfg.min_samples:
            if members:
                logger.warning("class %s: %d samples < min_samples=%d, not profiled",
                               labels[cls], len(members), cfg.min_samples)
            continue
        f_exp = exact_mean([feats[i].distribution for i in members]).astype(np.float32)
        votes, n_pat = None, 0
        if image:
            pats = [feats[i].pattern.bits for i in members if feats[i].pattern is not None]
            n_pat = len(pats)
            if pats:
                votes = np.sum(pats, axis=0).astype(np.int64)
        truth = [calib.labels[i] for i in members if calib.labels[i] is not None]
        purity = (sum(t == labels[cls] for t in truth) / len(truth)) if truth else None
        profiles[labels[cls]] = ClassProfile(labels[cls], f_exp, len(members), votes, n_pat, purity)
    if not profiles:
        raise ProfileError("no class reached min_samples; nothing profiled")
    provenance = {"model_hash": model_hash(net), "calibration_hash": calib.content_hash(),
                  "samples_per_class": counts, "min_samples": cfg.min_samples}
    return ProfileStore(profiles, calib.modality, provenance, cfg.crop, cfg.pattern_size)


def profile_distance_report(store: ProfileStore):
    """(labels, matrix) of pairwise activation inconsistency between class profiles."""
    labels = store.labels
    n = len(labels)
    if n < 2:
        raise ProfileError("need at least two profiles")
    mat = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            try:
                mat[i, j] = activation_inconsistency(store[labels[i]].f_exp, store[labels[j]].f_exp)
            except ConstantDistribution:
                mat[i, j] = np.nan
    return labels, mat


def summary_table(store: ProfileStore):
    rows = [f"{'class':<16}{'n':>6}{'patterns':>10}{'purity':>8}"]
    for label, p in store.profiles.items():
        purity = "-" if p.purity is None else f"{p.purity:.3f}"
        rows.append(f"{label:<16}{p.n:>6}{p.n_patterns:>10}{purity:>8}")
    skipped = [l for l, c in store.provenance.get("samples_per_class", {}).items()
               if l not in store.profiles]
    if skipped:
        rows.append("not profiled: " + ", ".join(skipped))
    return "\n".join(rows)


# -- persistence --------------------------------------------------------------------

def save_profiles(store: ProfileStore, path):
    arrays, classes = [], []
    for label, p in store.profiles.items():
        entry = {"label": label, "n": p.n, "n_patterns": p.n_patterns, "f_exp": len(arrays)}
        arrays.append(p.f_exp)
        if p.votes is not None:
            entry["votes"] = len(arrays)
            arrays.append(p.votes.astype(np.float32))
        if p.purity is not None:
            entry["purity"] = p.purity
        classes.append(entry)
    manifest = {
        "kind": "profiles",
        "modality": store.modality,
        "pattern_size": store.pattern_size,
        "crop": {"alpha": store.crop.alpha, "min_frac": store.crop.min_frac,
                 "weighted_by_class": store.crop.weighted_by_class},
        "provenance": store.provenance,
        "classes": classes,
    }
    return write_container(path, manifest, arrays)


def load_profiles(path, net: Network | None = None) -> ProfileStore:
    manifest, arrays = read_container(path, kind="profiles")
    profiles = {}
    for entry in manifest["classes"]:
        votes = None
        if "votes" in entry:
            votes = np.rint(arrays[entry["votes"]]).astype(np.int64)
        profiles[entry["label"]] = ClassProfile(entry["label"], arrays[entry["f_exp"]],
                                                entry["n"], votes, entry.get("n_patterns", 0),
                                                entry.get("purity"))
    store = ProfileStore(profiles, manifest["modality"], manifest.get("provenance", {}),
                         CropConfig(**manifest.get("crop", {})),
                         manifest.get("pattern_size", DEFAULT_SIZE))
    if net is not None:
        unknown = [l for l in profiles if l not in net.class_labels]
        if unknown:
            raise ProfileError(f"profiles for classes unknown to the model: {unknown}")
        k = net.last_conv_shape[0]
        bad = [l for l, p in profiles.items() if p.f_exp.shape != (k,)]
        if bad:
            raise ProfileError(f"profiles {bad} do not match the model's {k} last-conv channels")
    return store
