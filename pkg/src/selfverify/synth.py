"""Seeded synthetic datasets for the bundled desk models.

Images are 32x32 RGB renderings of simple shapes on smooth backgrounds.
Audio "commands" are one-second voiced glides between two vowels; the vowel
pair identifies the class.
"""

from __future__ import annotations

import numpy as np

from .audio import MfccConfig, fixed_length_features, mfcc

IMAGE_CLASSES = ("disk", "square", "ring", "triangle", "cross")
IMAGE_HW = 32

AUDIO_CLASSES = ("up", "down", "left", "right", "stop", "go")
SAMPLE_RATE = 16000
AUDIO_SECONDS = 1.0
# vowel formants (F1, F2, F3) in Hz
_VOWELS = {
    "a": (730, 1090, 2440), "i": (270, 2290, 3010), "u": (300, 870, 2240),
    "e": (530, 1840, 2480), "o": (570, 840, 2410), "ae": (660, 1720, 2410),
    "er": (490, 1350, 1690),
}
# each command is a glide between two vowels
_WORDS = {
    "up": ("er", "a"), "down": ("a", "u"), "left": ("e", "ae"),
    "right": ("a", "i"), "stop": ("o", "er"), "go": ("o", "u"),
}

def _background(rng, hw):
    yy, xx = np.mgrid[0:hw, 0:hw] / (hw - 1)
    base = rng.uniform(0.15, 0.45, size=3)
    tilt = rng.uniform(-0.15, 0.15, size=(3, 2))
    return base[:, None, None] + tilt[:, 0, None, None] * yy + tilt[:, 1, None, None] * xx


def _shape_mask(kind, rng, hw):
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64)
    r = rng.uniform(5.0, 9.0)
    cy, cx = rng.uniform(r + 1, hw - r - 2, size=2)
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return (dy ** 2 + dx ** 2 <= r ** 2).astype(float)
    if kind == "square":
        return ((np.abs(dy) <= r * 0.85) & (np.abs(dx) <= r * 0.85)).astype(float)
    if kind == "ring":
        d = np.sqrt(dy ** 2 + dx ** 2)
        return ((d <= r) & (d >= r * 0.55)).astype(float)
    if kind == "triangle":
        # apex up, base at dy = r * 0.8
        half = (dy + r) * 0.6
        return ((dy >= -r) & (dy <= r * 0.8) & (np.abs(dx) <= half)).astype(float)
    if kind == "cross":
        w = r * 0.35
        return (((np.abs(dy) <= w) & (np.abs(dx) <= r)) |
                ((np.abs(dx) <= w) & (np.abs(dy) <= r))).astype(float)
    raise ValueError(f"unknown shape {kind!r}")


def _antialias(mask, sigma=0.7):
    k = np.exp(-0.5 * (np.arange(-2, 3) / sigma) ** 2)
    k /= k.sum()
    pad = np.pad(mask, 2, mode="edge")
    rows = sum(kj * pad[:, j:j + mask.shape[1]] for j, kj in enumerate(k))
    return sum(kj * rows[j:j + mask.shape[0]] for j, kj in enumerate(k))


def render_image(kind, rng, hw=IMAGE_HW, noise=0.02):
    """One (3, hw, hw) image in [0, 1]."""
    img = _background(rng, hw)
    color = rng.uniform(0.6, 1.0, size=3) * rng.permutation([1.0, rng.uniform(0.2, 1.0), 0.3])
    mask = _antialias(_shape_mask(kind, rng, hw))
    img = img * (1 - mask) + color[:, None, None] * mask
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def image_dataset(n_per_class, seed=0, classes=IMAGE_CLASSES):
    """(images float32 (N,3,32,32), labels list[str]) interleaved by class."""
    rng = np.random.default_rng(seed)
    items, labels = [], []
    for _ in range(n_per_class):
        for kind in classes:
            items.append(render_image(kind, rng))
            labels.append(kind)
    return np.stack(items).astype(np.float32), labels


def render_command(word, rng, sr=SAMPLE_RATE, seconds=AUDIO_SECONDS):
    """One waveform: a voiced vowel glide with jittered pitch, formants, timing and noise."""
    n = int(sr * seconds)
    onset = int(rng.uniform(0.05, 0.2) * sr)
    length = int(rng.uniform(0.55, 0.7) * sr)
    t = np.arange(length) / length
    f0 = rng.uniform(110, 220) * (1 + rng.uniform(-0.15, 0.15) * t)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    v0, v1 = (np.array(_VOWELS[v], dtype=float) for v in _WORDS[word])
    mix = np.clip((t - 0.35) / 0.3, 0.0, 1.0)
    formants = (v0[:, None] * (1 - mix) + v1[:, None] * mix) * rng.uniform(0.93, 1.07)
    voiced = np.zeros(length)
    for h in range(1, int(4000 / f0.min()) + 1):
        fh = h * f0
        amp = 0.02 + sum(g * np.exp(-0.5 * ((fh - fk) / 120.0) ** 2)
                         for g, fk in zip((1.0, 0.6, 0.3), formants))
        voiced += np.where(fh < 4000, amp, 0.0) * np.sin(h * phase)
    env = np.minimum(1.0, np.minimum(np.arange(length), np.arange(length)[::-1]) / (0.03 * sr))
    voiced *= env / np.abs(voiced).max()
    out = rng.normal(0.0, 0.005, size=n)
    end = min(n, onset + length)
    out[onset:end] += (0.3 * rng.uniform(0.5, 1.0) * voiced)[:end - onset]
    return np.clip(out, -1.0, 1.0)


def audio_dataset(n_per_class, seed=0, classes=AUDIO_CLASSES, cfg=MfccConfig(), target_frames=98):
    """(raw MFCC features float64 (N, frames, coeffs), labels)."""
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for _ in range(n_per_class):
        for word in classes:
            wav = render_command(word, rng)
            feats.append(fixed_length_features(mfcc(wav, cfg), target_frames))
            labels.append(word)
    return np.stack(feats), labels
