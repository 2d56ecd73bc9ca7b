import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_lstm
from oracles import fire_scan, smooth_bruteforce
from kwspot.checkpoint import KwsModel
from kwspot.detector import (DetectorConfig, StreamingDetector, batch_detect, detect, fire,
                             smooth, stream_detect)
from kwspot.features import FeatureNorm, FeatureSequence
from kwspot.model import PosteriorTrace


def test_smooth_examples():
    np.testing.assert_allclose(smooth(np.full(50, 0.7), 30), 0.7, rtol=0, atol=1e-15)
    kw = np.random.default_rng(0).random(20)
    np.testing.assert_array_equal(smooth(kw, 1), kw)
    np.testing.assert_array_equal(smooth(np.array([0.0, 0.0, 1.0, 1.0]), 2), [0, 0, 0.5, 1.0])


def test_smooth_reads_keyword_column():
    rows = np.array([[0.9, 0.1], [0.2, 0.8]])
    np.testing.assert_allclose(smooth(PosteriorTrace(rows), 2), [0.1, 0.45])
    np.testing.assert_allclose(smooth(rows, 2), [0.1, 0.45])


@settings(max_examples=100)
@given(st.integers(0, 10 ** 6), st.integers(1, 40))
def test_smooth_matches_bruteforce(seed, n_ctx):
    kw = np.random.default_rng(seed).random(int(np.random.default_rng(seed).integers(1, 120)))
    np.testing.assert_allclose(smooth(kw, n_ctx), smooth_bruteforce(list(kw), n_ctx),
                               rtol=0, atol=1e-12)


def test_fire_examples():
    cfg = DetectorConfig(threshold=0.5)
    assert fire(np.full(100, 0.4), cfg) == []
    assert fire(np.ones(100), cfg) == [0, 41, 82]
    assert fire(np.ones(7), DetectorConfig(n_lck=0, threshold=0.5)) == list(range(7))


@settings(max_examples=300)
@given(st.integers(0, 10 ** 6), st.integers(0, 60), st.floats(0.0, 1.0))
def test_fire_matches_scan_and_gap(seed, n_lck, thr):
    s = np.random.default_rng(seed).random(200)
    cfg = DetectorConfig(n_lck=n_lck, threshold=thr)
    spikes = fire(s, cfg)
    assert spikes == fire_scan(list(s), thr, n_lck)
    assert all(b - a >= n_lck + 1 for a, b in zip(spikes, spikes[1:]))


@settings(max_examples=200)
@given(st.integers(0, 10 ** 6))
def test_spike_count_non_increasing_in_threshold(seed):
    rng = np.random.default_rng(seed)
    s = smooth(rng.random(300) ** 3, int(rng.integers(1, 10)))
    counts = [len(fire(s, DetectorConfig(n_lck=40, threshold=t))) for t in np.linspace(0, 1, 51)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def tiny_model(seed=0, left=2, right=3):
    n_feat = 20
    p = random_lstm(n_feat * (left + right + 1), 3, 2, seed=seed, scale=0.3)
    return KwsModel("lstm", p, left, right, FeatureNorm.identity())


def test_stream_equals_batch(rng):
    model = tiny_model()
    for k in range(5):
        feat = FeatureSequence(rng.normal(size=(int(rng.integers(1, 60)), 20)).astype(np.float32))
        trace = model.posteriors(feat)
        thr = float(np.quantile(smooth(trace, 5), 0.7))
        cfg = DetectorConfig(n_ctx=5, n_lck=4, threshold=thr)
        assert stream_detect(model, feat.frames, cfg) == batch_detect(model, feat, cfg)
        det = StreamingDetector(model, cfg)
        for f in feat.frames:
            det.push(f)
        det.finish()
        np.testing.assert_array_equal(det.smoothed, smooth(trace, 5))


def test_stream_emission_latency(rng):
    model = tiny_model(right=3)
    feat = rng.normal(size=(30, 20)).astype(np.float32)
    cfg = DetectorConfig(n_ctx=1, n_lck=0, threshold=0.0)
    det = StreamingDetector(model, cfg)
    for t, f in enumerate(feat):
        out = det.push(f)
        # with threshold 0 every frame fires, as soon as its lookahead exists
        assert out == ([t - 3] if t >= 3 else [])
    assert det.finish() == [27, 28, 29]


def test_empty_stream():
    assert stream_detect(tiny_model(), [], DetectorConfig()) == []


def test_detector_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(n_ctx=0)
    with pytest.raises(ValueError):
        DetectorConfig(n_lck=-1)


def test_stream_requires_lstm():
    m = tiny_model()
    m.kind = "dnn"
    with pytest.raises(ValueError):
        StreamingDetector(m, DetectorConfig())
