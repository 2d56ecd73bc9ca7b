"""Log mel filterbank energies (LFBE) and context stacking.

Frames are 25 ms long with a 10 ms shift at 16 kHz (400 / 160 samples).
Each frame is Hamming windowed, zero padded to a 512-point FFT, passed
through 20 triangular mel filters and log compressed with an energy floor.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
FRAME_LEN = 400
FRAME_SHIFT = 160
N_FFT = 512
N_MELS = 20
F_MIN = 60.0
F_MAX = 7800.0
ENERGY_FLOOR = 1e-10

CACHE_MAGIC = b"KWSF"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIII")


class FeatureError(ValueError):
    """Raised for invalid audio input or malformed feature files."""


@dataclass
class WaveForm:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.sample_rate != SAMPLE_RATE:
            raise FeatureError(f"{self.id}: sample rate {self.sample_rate} != {SAMPLE_RATE}")
        if self.samples.ndim != 1:
            raise FeatureError(f"{self.id}: expected mono samples, got shape {self.samples.shape}")


@dataclass
class FeatureSequence:
    frames: np.ndarray
    utterance_id: str = ""
    frame_shift_ms: int = 10
    frame_len_ms: int = 25

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class StackedSequence:
    vectors: np.ndarray
    left: int
    right: int

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def hz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) / 1127.0)


def mel_center_frequencies(n_mels=N_MELS, f_min=F_MIN, f_max=F_MAX):
    """Center frequency in Hz of each triangular filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE, f_min=F_MIN, f_max=F_MAX):
    """Triangular filters on the mel scale, shape (n_mels, n_fft // 2 + 1).

    Filter edges are equally spaced in mel between ``f_min`` and ``f_max``;
    each triangle rises from its lower to its center edge and falls to its
    upper edge, evaluated at the FFT bin frequencies.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    return np.clip(np.minimum(rising, falling), 0.0, None)


_FBANK = mel_filterbank()
_WINDOW = np.hamming(FRAME_LEN)


def frame_count(n_samples: int) -> int:
    if n_samples < FRAME_LEN:
        return 0
    return (n_samples - FRAME_LEN) // FRAME_SHIFT + 1


def frame_signal(wave: WaveForm) -> np.ndarray:
    """Split into overlapping 400-sample frames with a 160-sample hop.

    The trailing partial frame is dropped.  Returns a (T, 400) float64 view
    of the samples.
    """
    x = np.asarray(wave.samples, dtype=np.float64)
    n = frame_count(x.shape[0])
    if n == 0:
        raise FeatureError(
            f"utterance shorter than one frame: {wave.id or '<unnamed>'} has "
            f"{x.shape[0]} samples, need at least {FRAME_LEN}"
        )
    idx = np.arange(FRAME_LEN)[None, :] + FRAME_SHIFT * np.arange(n)[:, None]
    return x[idx]


def compute_lfbe(wave: WaveForm) -> FeatureSequence:
    """20-dim log mel filterbank energies, one row per 10 ms frame.

    Output is rounded to float32 so that cached features reproduce the
    in-memory values exactly.
    """
    frames = frame_signal(wave) * _WINDOW
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    energies = np.maximum(power @ _FBANK.T, ENERGY_FLOOR)
    return FeatureSequence(np.log(energies).astype(np.float32), utterance_id=wave.id)


def stack_context(feat, left: int, right: int) -> StackedSequence:
    """Concatenate each frame with its neighbours.

    Row ``t`` is ``frames[t - left], ..., frames[t + right]`` with indices
    clamped to the first/last frame, so the output keeps one row per input
    frame.
    """
    frames = feat.frames if isinstance(feat, FeatureSequence) else np.asarray(feat)
    if left < 0 or right < 0:
        raise FeatureError("context sizes must be non-negative")
    T = frames.shape[0]
    if T == 0:
        raise FeatureError("cannot stack an empty feature sequence")
    offsets = np.arange(-left, right + 1)
    idx = np.clip(np.arange(T)[:, None] + offsets[None, :], 0, T - 1)
    return StackedSequence(frames[idx].reshape(T, -1), left, right)


def read_wav(path) -> WaveForm:
    """Read a mono 16-bit 16 kHz PCM WAV file."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            if w.getcomptype() != "NONE":
                raise FeatureError(f"{path}: compressed WAV is not supported")
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise FeatureError(f"{path}: not a PCM WAV file ({exc})") from exc
    if channels != 1:
        raise FeatureError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise FeatureError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise FeatureError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    return WaveForm(np.frombuffer(raw, dtype="<i2").astype(np.int16), rate, path.stem)


def write_wav(path, wave_form: WaveForm) -> None:
    samples = np.asarray(wave_form.samples)
    if samples.dtype != np.int16:
        raise FeatureError("write_wav expects int16 samples")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(wave_form.sample_rate)
        w.writeframes(samples.astype("<i2").tobytes())


def save_features(path, feat: FeatureSequence) -> None:
    frames = np.ascontiguousarray(feat.frames, dtype="<f4")
    T, dim = frames.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, T, dim))
        fh.write(frames.tobytes())


def load_features(path, utterance_id: str | None = None) -> FeatureSequence:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise FeatureError(f"{path}: truncated feature header")
    magic, version, T, dim = _CACHE_HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise FeatureError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise FeatureError(f"{path}: unsupported feature cache version {version}")
    body = data[_CACHE_HEADER.size:]
    if len(body) != 4 * T * dim:
        raise FeatureError(f"{path}: expected {T}x{dim} floats, got {len(body)} bytes")
    frames = np.frombuffer(body, dtype="<f4").reshape(T, dim).astype(np.float32)
    return FeatureSequence(frames, utterance_id=utterance_id or path.stem)


@dataclass
class FeatureNorm:
    """Global per-dimension standardization fitted on training features.

    Statistics are rounded to float32 so a checkpointed normalizer behaves
    exactly like the one used during training.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, sequences, min_std: float = 1e-3):
        frames = np.concatenate([np.asarray(getattr(s, "frames", s), dtype=np.float64)
                                 for s in sequences])
        mean = frames.mean(axis=0)
        std = np.maximum(frames.std(axis=0), min_std)
        return cls(mean.astype(np.float32), std.astype(np.float32))

    @classmethod
    def identity(cls, dim: int = N_MELS):
        return cls(np.zeros(dim, np.float32), np.ones(dim, np.float32))

    def apply(self, frames) -> np.ndarray:
        frames = np.asarray(getattr(frames, "frames", frames), dtype=np.float64)
        return (frames - self.mean.astype(np.float64)) / self.std.astype(np.float64)
