import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfverify.audio import (MfccConfig, dct_matrix, filterbank_energies, fixed_length_features,
                              frame_count, hz_to_mel, ingest_audio, mel_centers, mel_filterbank,
                              mfcc, read_wav, waveform_features, write_wav)
from selfverify.errors import IngestError, WaveformError

CFG = MfccConfig()


def test_silence_gives_identical_log_floor_frames():
    out = mfcc(np.zeros(4000), CFG)
    want = np.full(CFG.n_mels, np.log(CFG.log_floor)) @ dct_matrix(CFG.n_mels)[:CFG.n_coeffs].T
    np.testing.assert_allclose(out, np.broadcast_to(want, out.shape), rtol=1e-12, atol=1e-12)
    assert np.all(out == out[0])


def test_tone_peaks_in_the_nearest_mel_filter():
    t = np.arange(16000) / 16000
    fb = filterbank_energies(np.sin(2 * np.pi * 1000 * t), CFG)
    nearest = int(np.argmin(np.abs(hz_to_mel(mel_centers(CFG)) - hz_to_mel(1000))))
    assert np.all(np.argmax(fb, axis=1) == nearest)


@pytest.mark.parametrize("n", [400, 401, 559, 560, 16000])
def test_frame_count(n):
    assert mfcc(np.random.default_rng(0).normal(size=n), CFG).shape == (1 + (n - 400) // 160, 13)
    assert frame_count(n, CFG) == 1 + (n - 400) // 160


def test_short_or_stereo_waveforms_rejected():
    with pytest.raises(WaveformError):
        mfcc(np.zeros(100), CFG)
    with pytest.raises(WaveformError):
        mfcc(np.zeros((2, 1000)), CFG)
    with pytest.raises(WaveformError):
        mfcc(np.zeros(1000), CFG, sample_rate=8000)


def test_one_hop_shift_shifts_frames():
    rng = np.random.default_rng(1)
    y = rng.normal(size=8000)
    hop = CFG.hop_length
    a = mfcc(y[hop:], CFG)
    b = mfcc(y, CFG)
    # pre-emphasis of the first sample differs; frames from the second on are identical
    np.testing.assert_array_equal(a[1:], b[2:2 + len(a) - 1])


def test_filterbank_rows():
    fb = mel_filterbank(CFG)
    assert np.all(fb >= 0)
    sums = fb.sum(axis=1)
    assert np.all((sums > 0) & (sums <= 2))


def test_dct_is_orthonormal():
    d = dct_matrix(CFG.n_mels)
    v = np.random.default_rng(2).normal(size=CFG.n_mels)
    np.testing.assert_allclose(d.T @ (d @ v), v, atol=1e-5)
    np.testing.assert_allclose(d @ d.T, np.eye(CFG.n_mels), atol=1e-12)


def test_mfcc_deterministic():
    y = np.random.default_rng(3).normal(size=3000)
    assert mfcc(y, CFG).tobytes() == mfcc(y.copy(), CFG).tobytes()


def test_fixed_length_identity_and_pad():
    f = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(fixed_length_features(f, 4), f)
    one = np.array([[5.0, 6.0]])
    out = fixed_length_features(one, 3)
    np.testing.assert_array_equal(out, [[0, 0], [5, 6], [0, 0]])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40))
def test_crop_then_pad_keeps_the_centre(t, target):
    f = np.arange(1, t + 1, dtype=float)[:, None]
    cropped = fixed_length_features(f, target)
    assert cropped.shape == (target, 1)
    back = fixed_length_features(cropped, t)
    if target >= t:
        np.testing.assert_array_equal(back, f)
    else:
        start = (t - target) // 2
        np.testing.assert_array_equal(back[start:start + target], f[start:start + target])
        assert not back[:start].any() and not back[start + target:].any()
        assert back[(t - 1) // 2, 0] == f[(t - 1) // 2, 0]


def test_wav_round_trip_and_ingest(tmp_path):
    y = 0.5 * np.sin(np.arange(16000) / 10)
    (tmp_path / "go").mkdir()
    write_wav(tmp_path / "go" / "a.wav", y)
    back, rate = read_wav(tmp_path / "go" / "a.wav")
    assert rate == 16000
    assert np.max(np.abs(back - y)) <= 1 / 32768
    (tmp_path / "go" / "bad.wav").write_bytes(b"RIFFnope")
    meta = {"mfcc": CFG.to_dict(), "target_frames": 98}
    ss = ingest_audio(tmp_path, meta)
    assert len(ss) == 1 and ss.labels == ["go"] and ss.info["skipped"] == 1
    np.testing.assert_array_equal(ss.items[0], waveform_features(back, meta, rate))


def test_wrong_rate_wav_is_skipped(tmp_path):
    write_wav(tmp_path / "a.wav", np.zeros(8000), sample_rate=8000)
    with pytest.raises(IngestError):
        ingest_audio(tmp_path, {"target_frames": 98})
