"""On-disk containers: model bundles, sample sets, image ingestion.

Every artifact is a directory holding ``manifest.json`` plus ``w_<i>.bin``
blobs. A blob is an 8-byte little-endian unsigned length N followed by N
little-endian float32 values, row-major.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (IngestError, ShapeError, ShapeInconsistency, TruncatedBlob,
                     VersionMismatch, BundleError)
from .imageio import read_pnm, resize_bilinear
from .network import LayerSpec, Network, NetworkSpec, expected_param_shapes

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


# -- generic container ------------------------------------------------------

def write_blob(path, arr):
    a = np.ascontiguousarray(arr, dtype="<f4").ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", a.size))
        fh.write(a.tobytes())
    return 8 + 4 * a.size


def read_blob(path, expected_length=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8:
        raise TruncatedBlob(f"{path}: missing length prefix")
    (n,) = struct.unpack("<Q", data[:8])
    if expected_length is not None and n != expected_length:
        raise ShapeInconsistency(f"{path}: holds {n} values, manifest declares {expected_length}")
    if len(data) != 8 + 4 * n:
        raise TruncatedBlob(f"{path}: {len(data) - 8} payload bytes, expected {4 * n}")
    return np.frombuffer(data, dtype="<f4", offset=8).astype(np.float32)


def write_container(path, manifest, arrays):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blobs = []
    for i, arr in enumerate(arrays):
        name = f"w_{i}.bin"
        a = np.asarray(arr)
        write_blob(path / name, a)
        blobs.append({"file": name, "shape": list(a.shape), "length": int(a.size)})
    full = {"format_version": FORMAT_VERSION, **manifest, "blobs": blobs}
    with open(path / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(full, fh, indent=1, sort_keys=False)
        fh.write("\n")
    return path


def read_container(path, kind=None):
    """Returns (manifest, list of float32 arrays shaped per the manifest)."""
    path = Path(path)
    try:
        with open(path / MANIFEST, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise BundleError(f"{path}: no {MANIFEST}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: unreadable manifest ({exc})") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version!r}, expected {FORMAT_VERSION}")
    if kind is not None and manifest.get("kind") != kind:
        raise BundleError(f"{path}: container kind {manifest.get('kind')!r}, expected {kind!r}")
    arrays = []
    for entry in manifest.get("blobs", []):
        shape = tuple(entry["shape"])
        length = int(np.prod(shape)) if shape else 1
        if entry.get("length", length) != length:
            raise ShapeInconsistency(f"{path}: blob {entry['file']} length/shape disagree")
        arrays.append(read_blob(path / entry["file"], length).reshape(shape))
    return manifest, arrays


def _digest(manifest, arrays):
    h = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode())
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return h.hexdigest()


# -- model bundles ----------------------------------------------------------

def _network_manifest(net: Network):
    spec = net.spec
    return {
        "kind": "model",
        "input_shape": list(spec.input_shape),
        "class_labels": list(spec.class_labels),
        "layers": [layer.to_dict() for layer in spec.layers],
        **spec.meta,
    }


def _network_arrays(net):
    arrays, index = [], []
    for i, p in enumerate(net.params):
        for name in ("weight", "bias"):
            if name in p:
                index.append({"layer": i, "name": name})
                arrays.append(p[name])
    return arrays, index


def save_bundle(net: Network, path):
    arrays, index = _network_arrays(net)
    manifest = _network_manifest(net)
    manifest["params"] = index
    return write_container(path, manifest, arrays)


def load_bundle(path) -> Network:
    manifest, arrays = read_container(path, kind="model")
    reserved = {"format_version", "kind", "input_shape", "class_labels", "layers", "params", "blobs"}
    try:
        layers = [LayerSpec.from_dict(d) for d in manifest["layers"]]
        spec = NetworkSpec(layers, manifest["class_labels"], tuple(manifest["input_shape"]),
                           meta={k: v for k, v in manifest.items() if k not in reserved})
    except (KeyError, TypeError) as exc:
        raise BundleError(f"{path}: malformed manifest ({exc})") from exc
    try:
        spec.validate()
    except ShapeError as exc:
        raise ShapeInconsistency(f"{path}: {exc}") from exc
    params = [{} for _ in layers]
    index = manifest.get("params", [])
    if len(index) != len(arrays):
        raise ShapeInconsistency(f"{path}: {len(index)} parameter entries for {len(arrays)} blobs")
    for entry, arr in zip(index, arrays):
        params[entry["layer"]][entry["name"]] = arr
    expected = expected_param_shapes(spec)
    for i, (want, got) in enumerate(zip(expected, params)):
        for name, shp in want.items():
            if name not in got or tuple(got[name].shape) != tuple(shp):
                raise ShapeInconsistency(f"{path}: layer {i} {name} shape mismatch, expected {shp}")
    return Network(spec, params)


def model_hash(net: Network):
    arrays, index = _network_arrays(net)
    manifest = _network_manifest(net)
    manifest["params"] = index
    return _digest(manifest, arrays)


# -- sample sets -------------------------------------------------------------

@dataclass
class SampleSet:
    items: np.ndarray                      # (N, *item_shape) float32
    modality: str                          # "image" | "audio-mfcc"
    labels: list = field(default_factory=list)   # true label or None per item
    ids: list = field(default_factory=list)
    meta: list = field(default_factory=list)     # extra per-item fields (truth, attack, ...)
    info: dict = field(default_factory=dict)     # set-level provenance

    def __post_init__(self):
        self.items = np.ascontiguousarray(self.items, dtype=np.float32)
        n = len(self.items)
        if not self.labels:
            self.labels = [None] * n
        if not self.ids:
            self.ids = [f"item{i:05d}" for i in range(n)]
        if not self.meta:
            self.meta = [{} for _ in range(n)]
        if not (len(self.labels) == len(self.ids) == len(self.meta) == n):
            raise ShapeError("sample set fields have inconsistent lengths")

    def __len__(self):
        return len(self.items)

    @property
    def item_shape(self):
        return tuple(self.items.shape[1:])

    def subset(self, indices):
        indices = list(indices)
        return SampleSet(self.items[indices], self.modality,
                         [self.labels[i] for i in indices], [self.ids[i] for i in indices],
                         [dict(self.meta[i]) for i in indices], dict(self.info))

    def check_labels(self, class_labels):
        unknown = {l for l in self.labels if l is not None and l not in class_labels}
        if unknown:
            raise ShapeError(f"labels outside the model label set: {sorted(unknown)}")

    def content_hash(self):
        """Order-independent digest of (item, label) pairs."""
        digests = sorted(
            hashlib.sha256(item.astype("<f4").tobytes() + repr(label).encode()).hexdigest()
            for item, label in zip(self.items, self.labels))
        return hashlib.sha256("".join(digests).encode()).hexdigest()


def save_sampleset(ss: SampleSet, path):
    items = []
    for sid, label, meta in zip(ss.ids, ss.labels, ss.meta):
        entry = {"id": sid}
        if label is not None:
            entry["label"] = label
        entry.update(meta)
        items.append(entry)
    manifest = {"kind": "sampleset", "modality": ss.modality,
                "item_shape": list(ss.item_shape), "items": items, "info": ss.info}
    return write_container(path, manifest, [ss.items])


def load_sampleset(path) -> SampleSet:
    manifest, arrays = read_container(path, kind="sampleset")
    entries = manifest["items"]
    shape = tuple(manifest["item_shape"])
    items = arrays[0] if arrays else np.zeros((0,) + shape, np.float32)
    if items.shape != (len(entries),) + shape:
        raise ShapeInconsistency(f"{path}: items blob shape {items.shape} does not match manifest")
    ids = [e["id"] for e in entries]
    labels = [e.get("label") for e in entries]
    meta = [{k: v for k, v in e.items() if k not in ("id", "label")} for e in entries]
    return SampleSet(items, manifest["modality"], labels, ids, meta, manifest.get("info", {}))


# -- image ingestion ----------------------------------------------------------

def _image_files(root):
    """(path, label) pairs: files directly in root are unlabeled, files in subdirs take the subdir name."""
    root = Path(root)
    out = []
    for entry in sorted(os.listdir(root)):
        p = root / entry
        if p.is_dir():
            out.extend((q, entry) for q in sorted(p.iterdir()) if q.is_file())
        elif p.is_file() and p.name != MANIFEST:
            out.append((p, None))
    return out


def normalize_image(img, normalization):
    """[0,1] pixels to model input using per-channel mean/std (identity when absent)."""
    if not normalization:
        return img
    mean = np.asarray(normalization.get("mean", 0.0), dtype=np.float64).reshape(-1, 1, 1)
    std = np.asarray(normalization.get("std", 1.0), dtype=np.float64).reshape(-1, 1, 1)
    return (img - mean) / std


def denormalize_image(x, normalization):
    if not normalization:
        return x
    mean = np.asarray(normalization.get("mean", 0.0), dtype=np.float64).reshape(-1, 1, 1)
    std = np.asarray(normalization.get("std", 1.0), dtype=np.float64).reshape(-1, 1, 1)
    return x * std + mean


def value_box_for(normalization):
    """Per-channel (low, high) of normalized inputs whose pixels lie in [0, 1]."""
    lo = normalize_image(np.zeros((1, 1, 1)), normalization)
    hi = normalize_image(np.ones((1, 1, 1)), normalization)
    return lo, hi


def ingest_images(root, target_shape, normalization=None) -> SampleSet:
    """Load every PGM/PPM under ``root`` as a model-ready SampleSet.

    Unreadable files are skipped with a warning; their count is kept in
    ``info["skipped"]``.
    """
    c, h, w = target_shape
    items, labels, ids = [], [], []
    skipped = 0
    for path, label in _image_files(root):
        try:
            img = read_pnm(path)
        except (IngestError, OSError) as exc:
            logger.warning("skipping %s: %s", path, exc)
            skipped += 1
            continue
        if img.shape[0] != c:
            img = np.repeat(img, c, axis=0) if img.shape[0] == 1 else img.mean(axis=0, keepdims=True)
        img = resize_bilinear(img, (h, w))
        items.append(normalize_image(img, normalization))
        labels.append(label)
        ids.append(str(path.relative_to(root)))
    if not items:
        raise IngestError(f"{root}: no usable image files ({skipped} skipped)")
    return SampleSet(np.stack(items), "image", labels, ids, info={"skipped": skipped})
