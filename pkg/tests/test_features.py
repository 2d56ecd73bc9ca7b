import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwspot.features import (ENERGY_FLOOR, FeatureError, FeatureNorm, FeatureSequence,
                             WaveForm, compute_lfbe, frame_count, frame_signal, load_features,
                             mel_center_frequencies, mel_filterbank, read_wav, save_features,
                             stack_context, write_wav)


def tone(freq, n=16000, amp=32767.0):
    t = np.arange(n) / 16000
    return np.round(amp * np.sin(2 * np.pi * freq * t)).astype(np.int16)


@pytest.mark.parametrize("n,expected", [(16000, 98), (400, 1), (559, 1), (560, 2)])
def test_frame_count_examples(n, expected):
    assert frame_signal(WaveForm(np.zeros(n, np.int16))).shape == (expected, 400)


def test_short_waveform_rejected():
    with pytest.raises(FeatureError, match="shorter than one frame"):
        frame_signal(WaveForm(np.zeros(399, np.int16), id="tiny"))


@given(st.integers(400, 5000))
def test_frame_count_matches_loop(n):
    x = np.arange(n) % 251
    frames = frame_signal(WaveForm(x))
    loop = []
    start = 0
    while start + 400 <= n:
        loop.append(x[start:start + 400])
        start += 160
    assert frames.shape[0] == len(loop) == frame_count(n)
    np.testing.assert_array_equal(frames, np.array(loop))


def test_silence_hits_energy_floor():
    feat = compute_lfbe(WaveForm(np.zeros(4000, np.int16)))
    assert feat.frames.shape == (frame_count(4000), 20)
    assert np.all(feat.frames == np.float32(np.log(ENERGY_FLOOR)))


def test_tone_peaks_in_nearest_filter():
    centers = mel_center_frequencies()
    nearest = int(np.argmin(np.abs(centers - 1000.0)))
    feat = compute_lfbe(WaveForm(tone(1000.0)))
    assert np.all(np.argmax(feat.frames, axis=1) == nearest)


def test_doubling_amplitude_adds_log4():
    x = tone(1500.0, amp=8000.0).astype(np.int32)
    a = compute_lfbe(WaveForm(x)).frames.astype(np.float64)
    b = compute_lfbe(WaveForm(2 * x)).frames.astype(np.float64)
    above = a > np.log(ENERGY_FLOOR) + 1
    np.testing.assert_allclose((b - a)[above], np.log(4.0), atol=1e-4)


def test_finite_for_extreme_inputs(rng):
    for x in (np.full(800, 32767, np.int16), np.full(800, -32768, np.int16),
              rng.integers(-32768, 32767, 3000).astype(np.int16)):
        assert np.all(np.isfinite(compute_lfbe(WaveForm(x)).frames))


def test_filterbank_shape_and_coverage():
    fb = mel_filterbank()
    assert fb.shape == (20, 257)
    assert np.all(fb.sum(axis=1) > 0)
    # adjacent triangles overlap so every bin is covered at most once in total
    assert np.all(fb.sum(axis=0) <= 1.0 + 1e-12)


def test_stack_identity_and_clamping():
    frames = np.arange(60, dtype=np.float32).reshape(3, 20)
    np.testing.assert_array_equal(stack_context(FeatureSequence(frames), 0, 0).vectors, frames)
    one = frames[:1]
    st1 = stack_context(one, 10, 10)
    np.testing.assert_array_equal(st1.vectors, np.tile(one, (1, 21)))


def test_dnn_context_dimension():
    assert stack_context(np.zeros((5, 20)), 20, 10).dim == 620


@settings(max_examples=50)
@given(st.integers(1, 12), st.integers(0, 6), st.integers(0, 6))
def test_stack_matches_bruteforce(T, left, right):
    frames = np.random.default_rng(T * 100 + left * 10 + right).normal(size=(T, 20))
    got = stack_context(frames, left, right).vectors
    for t in range(T):
        parts = [frames[min(max(j, 0), T - 1)] for j in range(t - left, t + right + 1)]
        np.testing.assert_array_equal(got[t], np.concatenate(parts))


def test_wav_roundtrip_and_rejects(tmp_path):
    x = tone(440.0, n=1600)
    write_wav(tmp_path / "a.wav", WaveForm(x, id="a"))
    w = read_wav(tmp_path / "a.wav")
    np.testing.assert_array_equal(w.samples, x)
    import wave
    with wave.open(str(tmp_path / "st.wav"), "wb") as fh:
        fh.setnchannels(2); fh.setsampwidth(2); fh.setframerate(16000)
        fh.writeframes(np.zeros(800, "<i2").tobytes())
    with pytest.raises(FeatureError, match="mono"):
        read_wav(tmp_path / "st.wav")
    with wave.open(str(tmp_path / "sr.wav"), "wb") as fh:
        fh.setnchannels(1); fh.setsampwidth(2); fh.setframerate(8000)
        fh.writeframes(np.zeros(800, "<i2").tobytes())
    with pytest.raises(FeatureError, match="16000"):
        read_wav(tmp_path / "sr.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav")
    with pytest.raises(FeatureError):
        read_wav(tmp_path / "junk.wav")


def test_feature_cache_roundtrip(tmp_path, rng):
    feat = compute_lfbe(WaveForm(rng.integers(-3000, 3000, 8000).astype(np.int16), id="u1"))
    save_features(tmp_path / "u1.kwsf", feat)
    raw = (tmp_path / "u1.kwsf").read_bytes()
    assert raw[:4] == b"KWSF"
    back = load_features(tmp_path / "u1.kwsf")
    np.testing.assert_array_equal(back.frames, feat.frames)
    assert back.utterance_id == "u1"
    (tmp_path / "bad.kwsf").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FeatureError, match="magic"):
        load_features(tmp_path / "bad.kwsf")
    (tmp_path / "short.kwsf").write_bytes(raw[:-4])
    with pytest.raises(FeatureError):
        load_features(tmp_path / "short.kwsf")


def test_feature_norm(rng):
    seqs = [rng.normal(5.0, 3.0, size=(50, 20)) for _ in range(4)]
    norm = FeatureNorm.fit(seqs)
    z = norm.apply(np.concatenate(seqs))
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-5)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-5)
    assert norm.mean.dtype == np.float32
