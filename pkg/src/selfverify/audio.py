"""MFCC front end and 16-bit PCM WAV I/O for the command classifier."""

from __future__ import annotations

import logging
import os
import wave
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bundle import SampleSet
from .errors import IngestError, WaveformError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = 16000
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    window: str = "hamming"
    n_fft: int = 512
    n_mels: int = 40
    n_coeffs: int = 13
    preemphasis: float = 0.97
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_fft < self.frame_length:
            raise ValueError(f"n_fft {self.n_fft} shorter than frame {self.frame_length}")
        if self.n_coeffs > self.n_mels:
            raise ValueError("more coefficients than mel filters")
        if self.window != "hamming":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def frame_length(self):
        return int(round(self.sample_rate * self.frame_ms / 1000))

    @property
    def hop_length(self):
        return int(round(self.sample_rate * self.hop_ms / 1000))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig):
    """(n_mels, n_fft//2 + 1) triangular filters on the HTK mel scale, area-normalized."""
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, freqs.size))
    for m in range(cfg.n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall)) * (2.0 / (hi - lo))
    return fb


def mel_centers(cfg: MfccConfig):
    return mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))[1:-1]


def dct_matrix(n):
    """Orthonormal DCT-II as an (n, n) matrix: coefficients = D @ signal."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    d[0] /= np.sqrt(2.0)
    return d


def frame_count(n_samples, cfg: MfccConfig):
    return 1 + (n_samples - cfg.frame_length) // cfg.hop_length


def _frames(waveform, cfg):
    y = np.asarray(waveform, dtype=np.float64)
    if y.ndim != 1:
        raise WaveformError("waveform must be mono (1-D)")
    if y.size < cfg.frame_length:
        raise WaveformError(f"waveform of {y.size} samples is shorter than one frame")
    emph = np.empty_like(y)
    emph[0] = y[0]
    emph[1:] = y[1:] - cfg.preemphasis * y[:-1]
    n = frame_count(y.size, cfg)
    return sliding_window_view(emph, cfg.frame_length)[::cfg.hop_length][:n]


def filterbank_energies(waveform, cfg: MfccConfig = MfccConfig()):
    frames = _frames(waveform, cfg) * np.hamming(cfg.frame_length)
    power = np.abs(np.fft.rfft(frames, cfg.n_fft, axis=1)) ** 2 / cfg.n_fft
    # einsum's own loops, not BLAS: each frame's result must not depend on its row position
    return np.einsum("fk,mk->fm", power, mel_filterbank(cfg))


def mfcc(waveform, cfg: MfccConfig = MfccConfig(), sample_rate=None):
    """(frames, n_coeffs) MFCC matrix.

    pre-emphasis -> framing -> Hamming -> power spectrum -> mel filterbank ->
    floored log -> orthonormal DCT-II, first ``n_coeffs`` kept.
    """
    if sample_rate is not None and sample_rate != cfg.sample_rate:
        raise WaveformError(f"sample rate {sample_rate} Hz, expected {cfg.sample_rate} Hz")
    logfb = np.log(np.maximum(filterbank_energies(waveform, cfg), cfg.log_floor))
    return np.einsum("fm,cm->fc", logfb, dct_matrix(cfg.n_mels)[:cfg.n_coeffs])


def fixed_length_features(feats, target_frames):
    """Centre-crop or symmetrically zero-pad the frame axis to ``target_frames``."""
    if target_frames < 1:
        raise ValueError("target_frames must be >= 1")
    f = np.asarray(feats)
    t = f.shape[0]
    if t == target_frames:
        return f.copy()
    if t > target_frames:
        start = (t - target_frames) // 2
        return f[start:start + target_frames].copy()
    before = (target_frames - t) // 2
    out = np.zeros((target_frames,) + f.shape[1:], dtype=f.dtype)
    out[before:before + t] = f
    return out


# -- model-facing features ----------------------------------------------------

def scale_features(feats, scaling):
    """Map MFCCs into [0, 1] with per-coefficient offset/scale from the model manifest."""
    if not scaling:
        return feats
    offset = np.asarray(scaling["offset"], dtype=np.float64)
    scale = np.asarray(scaling["scale"], dtype=np.float64)
    return np.clip((feats - offset) / scale, 0.0, 1.0)


def waveform_features(waveform, meta, sample_rate=None):
    """Model input tensor (1, frames, coeffs) for a waveform, per the model manifest."""
    cfg = MfccConfig.from_dict(meta.get("mfcc", {}))
    feats = mfcc(waveform, cfg, sample_rate)
    feats = fixed_length_features(feats, int(meta["target_frames"]))
    return scale_features(feats, meta.get("feature_scaling"))[None].astype(np.float32)


# -- WAV ------------------------------------------------------------------------

def read_wav(path):
    """Return (float64 samples in [-1, 1), sample rate) from a 16-bit PCM mono WAV."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise WaveformError(f"{path}: {w.getnchannels()} channels, need mono")
            if w.getsampwidth() != 2:
                raise WaveformError(f"{path}: need 16-bit PCM")
            rate = w.getframerate()
            data = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise IngestError(f"{path}: not a PCM WAV file ({exc})") from exc
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, samples, sample_rate=16000):
    q = np.clip(np.rint(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(q.astype("<i2").tobytes())


def ingest_audio(root, meta) -> SampleSet:
    """WAV files under ``root`` (subdirectory name = label) as MFCC feature tensors."""
    root = Path(root)
    items, labels, ids = [], [], []
    skipped = 0
    entries = []
    for entry in sorted(os.listdir(root)):
        p = root / entry
        if p.is_dir():
            entries.extend((q, entry) for q in sorted(p.iterdir()) if q.is_file())
        elif p.is_file() and p.name != "manifest.json":
            entries.append((p, None))
    for path, label in entries:
        try:
            wav, rate = read_wav(path)
            items.append(waveform_features(wav, meta, rate))
        except (IngestError, WaveformError, OSError) as exc:
            logger.warning("skipping %s: %s", path, exc)
            skipped += 1
            continue
        labels.append(label)
        ids.append(str(path.relative_to(root)))
    if not items:
        raise IngestError(f"{root}: no usable WAV files ({skipped} skipped)")
    return SampleSet(np.stack(items), "audio-mfcc", labels, ids, info={"skipped": skipped})
