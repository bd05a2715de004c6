import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_net, random_params, small_cnn_spec
from selfverify import synth
from selfverify.audio import scale_features
from selfverify.bundle import SampleSet
from selfverify.cam import CropConfig
from selfverify.detector import (DetectorConfig, Thresholds, classify_with_verification, detect,
                                 verify_features)
from selfverify.features import analyze
from selfverify.network import Network
from selfverify.profiler import (ClassProfile, ProfileConfig, ProfileStore, build_profiles)
from selfverify.reports import dumps_report


def _zero_bias_net():
    spec = small_cnn_spec()
    params = [{k: (np.zeros_like(v) if k == "bias" else v) for k, v in p.items()}
              for p in random_params(spec, np.random.default_rng(2))]
    return Network(spec, params)


def _audio_store(net, f_exp):
    return ProfileStore({lab: ClassProfile(lab, np.asarray(f_exp, np.float32), 30)
                         for lab in net.class_labels}, "audio-mfcc")


def test_zero_input_is_suspicious():
    net = _zero_bias_net()
    store = _audio_store(net, [1.0, 2.0, 3.0])
    r = classify_with_verification(net, np.zeros(net.input_shape), store)
    assert r.verdict == "suspicious" and r.reason == "constant_distribution"
    assert r.d_activation is None


def test_zero_input_image_path_is_suspicious():
    net = _zero_bias_net()
    store = ProfileStore({lab: ClassProfile(lab, np.array([1, 2, 3], np.float32), 30,
                                            np.full((8, 8), 30), 30)
                          for lab in net.class_labels}, "image", pattern_size=8)
    r = classify_with_verification(net, np.zeros(net.input_shape), store)
    assert r.verdict == "suspicious" and r.reason == "all_zero_saliency"


def test_threshold_tie_is_natural(small_net):
    x = np.random.default_rng(0).random(small_net.input_shape)
    feat = analyze(small_net, x[None], "audio-mfcc")[0]
    store = _audio_store(small_net, [1.0, 0.0, 2.0])
    d = verify_features(feat, small_net, store).d_activation
    tie = verify_features(feat, small_net, store, DetectorConfig(Thresholds(activation=d)))
    assert tie.verdict == "natural"
    below = verify_features(feat, small_net, store,
                            DetectorConfig(Thresholds(activation=np.nextafter(d, 0))))
    assert below.verdict == "adversarial"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 2), st.floats(0, 2))
def test_raising_a_threshold_never_creates_an_alarm(seed, t1, t2):
    net = make_net(small_cnn_spec(), seed=seed % 5)
    x = np.random.default_rng(seed).random(net.input_shape)
    feat = analyze(net, x[None], "audio-mfcc")[0]
    store = _audio_store(net, np.random.default_rng(seed + 1).random(3))
    lo, hi = sorted((t1, t2))
    a = verify_features(feat, net, store, DetectorConfig(Thresholds(activation=lo)))
    b = verify_features(feat, net, store, DetectorConfig(Thresholds(activation=hi)))
    if a.verdict == "natural":
        assert b.verdict == "natural"


def test_negative_threshold_rejected():
    with pytest.raises(ValueError):
        Thresholds(semantic=-0.1)


def test_missing_profile_is_suspicious(small_net):
    x = np.random.default_rng(1).random((6, *small_net.input_shape))
    store = ProfileStore({}, "audio-mfcc")
    reports = detect(small_net, SampleSet(x, "audio-mfcc"), store)
    assert all(r.verdict == "suspicious" and r.reason == "missing_profile" for r in reports)


def test_image_activation_switch(small_net):
    rng = np.random.default_rng(3)
    calib = SampleSet(rng.random((60, *small_net.input_shape)), "image")
    store = build_profiles(small_net, calib, ProfileConfig(1, CropConfig(0.5), 8))
    x = calib.items[:10]
    base = detect(small_net, SampleSet(x, "image"), store, DetectorConfig(Thresholds(semantic=1.0)))
    assert all(r.verdict in ("natural", "suspicious") for r in base)
    assert all("activation" not in r.thresholds for r in base)
    strict = detect(small_net, SampleSet(x, "image"), store,
                    DetectorConfig(Thresholds(semantic=1.0, activation=0.0), image_activation=True))
    for b, s in zip(base, strict):
        assert s.d_activation == b.d_activation
        if b.verdict == "natural" and s.d_activation is not None and s.d_activation > 0:
            assert s.verdict == "adversarial"


def test_parallel_detection_is_byte_identical(small_net):
    rng = np.random.default_rng(4)
    calib = SampleSet(rng.random((100, *small_net.input_shape)), "image")
    store = build_profiles(small_net, calib, ProfileConfig(1, CropConfig(0.5), 8))
    ss = SampleSet(rng.random((150, *small_net.input_shape)), "image")
    one = [dumps_report(r) for r in detect(small_net, ss, store, workers=1)]
    two = [dumps_report(r) for r in detect(small_net, ss, store, workers=3)]
    assert one == two and len(one) == 150


# -- desk-scale self-consistency -------------------------------------------------

def _audio_samples(net, n_per_class, seed):
    meta = net.spec.meta
    feats, labels = synth.audio_dataset(n_per_class, seed, target_frames=int(meta["target_frames"]))
    x = np.stack([scale_features(f, meta["feature_scaling"])[None] for f in feats])
    return SampleSet(x, "audio-mfcc", labels)


@pytest.fixture(scope="module")
def audio_store(desk_audio):
    return build_profiles(desk_audio, _audio_samples(desk_audio, 40, seed=410))


@pytest.mark.slow
def test_held_out_audio_naturals_pass(desk_audio, audio_store):
    held = _audio_samples(desk_audio, 40, seed=420)
    reports = detect(desk_audio, held, audio_store)
    assert np.mean([r.d_activation < 0.11 for r in reports]) >= 0.9


@pytest.mark.slow
def test_calibration_exemplars_verify_as_natural(desk_audio, audio_store):
    calib = _audio_samples(desk_audio, 40, seed=410)
    for i in range(0, len(calib), 7):
        r = classify_with_verification(desk_audio, calib.items[i], audio_store)
        assert r.verdict == "natural", (i, r)
