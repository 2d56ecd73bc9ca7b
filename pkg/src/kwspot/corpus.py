"""Synthetic keyword/background corpus and JSON-lines manifests.

A keyword is a fixed rising chirp (400 -> 2400 Hz over 300 ms by default)
mixed into colored noise at a random SNR.  Optional distractors are the
same chirp time-reversed: at any single frame they look like a keyword, so
telling them apart needs several frames of context.

Sample-to-frame mapping: sample ``s`` belongs to frame ``s // 160``; a
keyword occupying samples ``[s0, s1)`` is aligned to the frames whose
160-sample hop region lies entirely inside it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .features import FRAME_SHIFT, SAMPLE_RATE, WaveForm, frame_count, write_wav
from .loss import Alignment, AlignmentError

log = logging.getLogger(__name__)

FULL_SCALE = 32767
SPLITS = ("train", "dev", "test")


class CorpusError(ValueError):
    pass


@dataclass
class SynthSpec:
    seed: int = 0
    utterance_seconds: float = 3.0
    # probability of 0, 1, 2, ... keywords per utterance
    keyword_count_probs: list = field(default_factory=lambda: [0.3, 0.4, 0.3])
    chirp_start_hz: float = 400.0
    chirp_end_hz: float = 2400.0
    chirp_ms: float = 300.0
    distractor_prob: float = 0.3
    noise_db_range: tuple = (-45.0, -30.0)
    snr_db_range: tuple = (0.0, 15.0)
    min_gap_frames: int = 60
    counts: dict = field(default_factory=lambda: {"train": 200, "dev": 50, "test": 200})

    def __post_init__(self):
        self.noise_db_range = tuple(self.noise_db_range)
        self.snr_db_range = tuple(self.snr_db_range)
        if self.chirp_ms < 50:
            raise CorpusError("keyword duration must cover at least 5 frames")
        if not all(np.isfinite(self.snr_db_range)) or self.snr_db_range[0] > self.snr_db_range[1]:
            raise CorpusError("SNR range must be finite and ordered")
        p = np.asarray(self.keyword_count_probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise CorpusError("keyword_count_probs must be a probability vector")
        unknown = set(self.counts) - set(SPLITS)
        if unknown:
            raise CorpusError(f"unknown splits {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise CorpusError(f"unknown SynthSpec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = asdict(self)
        d["noise_db_range"] = list(self.noise_db_range)
        d["snr_db_range"] = list(self.snr_db_range)
        return d


def chirp_template(spec: SynthSpec, reverse: bool = False) -> np.ndarray:
    """Unit-RMS chirp with 10% tapered edges."""
    n = int(round(spec.chirp_ms * SAMPLE_RATE / 1000))
    t = np.arange(n) / SAMPLE_RATE
    f0, f1 = spec.chirp_start_hz, spec.chirp_end_hz
    if reverse:
        f0, f1 = f1, f0
    x = signal.chirp(t, f0=f0, t1=t[-1], f1=f1, method="linear")
    x *= signal.windows.tukey(n, alpha=0.2)
    return x / np.sqrt(np.mean(x ** 2))


def samples_to_segment(s0: int, s1: int, total_frames: int):
    """Frames whose hop region ``[160 j, 160 j + 160)`` lies inside ``[s0, s1)``."""
    start = -(-s0 // FRAME_SHIFT)
    end = s1 // FRAME_SHIFT - 1
    end = min(end, total_frames - 1)
    if end < start:
        return None
    return start, end


def _colored_noise(rng, n):
    white = rng.standard_normal(n)
    pole = rng.uniform(0.5, 0.95)
    x = signal.lfilter([1.0], [1.0, -pole], white)
    return x / np.sqrt(np.mean(x ** 2))


def synth_utterance(spec: SynthSpec, seed, utterance_id: str = "utt"):
    """One utterance of noise with randomly placed keywords.

    Returns ``(WaveForm, Alignment)``; fully determined by ``(spec, seed)``.
    """
    rng = np.random.default_rng(seed)
    n = int(round(spec.utterance_seconds * SAMPLE_RATE))
    T = frame_count(n)
    kw = chirp_template(spec)
    L = kw.size
    n_kw = int(rng.choice(len(spec.keyword_count_probs), p=spec.keyword_count_probs))
    n_dis = int(rng.random() < spec.distractor_prob)
    kinds = [True] * n_kw + [False] * n_dis
    rng.shuffle(kinds)

    gap = (spec.min_gap_frames + 1) * FRAME_SHIFT
    usable = (T - 1) * FRAME_SHIFT + FRAME_SHIFT
    slack = usable - len(kinds) * L - max(len(kinds) - 1, 0) * gap
    if slack < 0:
        if n_dis and slack + L + gap >= 0:
            kinds = [k for k in kinds if k]
            slack += L + gap
        else:
            raise CorpusError(
                f"{utterance_id}: cannot place {n_kw} keywords of {L} samples in {n} samples"
            )

    noise_db = rng.uniform(*spec.noise_db_range)
    noise_rms = FULL_SCALE * 10 ** (noise_db / 20)
    x = _colored_noise(rng, n) * noise_rms

    offsets = np.sort(rng.integers(0, slack + 1, size=len(kinds)))
    reverse_kw = chirp_template(spec, reverse=True)
    segments = []
    for k, (is_kw, off) in enumerate(zip(kinds, offsets)):
        s0 = int(off) + k * (L + gap)
        snr = rng.uniform(*spec.snr_db_range)
        amp = noise_rms * 10 ** (snr / 20)
        x[s0:s0 + L] += amp * (kw if is_kw else reverse_kw)
        if is_kw:
            seg = samples_to_segment(s0, s0 + L, T)
            if seg is not None:
                segments.append(seg)

    peak = np.max(np.abs(x))
    if peak > FULL_SCALE:
        x *= FULL_SCALE / peak
    samples = np.clip(np.round(x), -FULL_SCALE, FULL_SCALE).astype(np.int16)
    return WaveForm(samples, SAMPLE_RATE, utterance_id), Alignment(utterance_id, segments, T)


@dataclass
class ManifestEntry:
    wav: str
    id: str
    segments: list
    split: str

    def to_json(self) -> str:
        return json.dumps({"wav": self.wav, "id": self.id,
                           "segments": [[int(s), int(e)] for s, e in self.segments],
                           "split": self.split})


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def split(self, name: str):
        return [e for e in self.entries if e.split == name]

    def wav_path(self, entry: ManifestEntry) -> Path:
        p = Path(entry.wav)
        return p if p.is_absolute() else self.root / p

    def alignment(self, entry: ManifestEntry, total_frames: int) -> Alignment:
        return Alignment(entry.id, [tuple(s) for s in entry.segments], total_frames)

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, Manifest) and self.entries == other.entries


def _wav_frames(path: Path):
    with wave.open(str(path), "rb") as w:
        return frame_count(w.getnframes())


def write_manifest(path, manifest: Manifest) -> str:
    """Write JSON lines; returns the sha256 of the file."""
    text = manifest.to_jsonl()
    Path(path).write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def manifest_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_manifest(path, check_audio: bool = True) -> Manifest:
    """Parse and validate a JSON-lines manifest.

    Segment ranges are checked against the WAV length when the file exists.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"manifest not found: {path}")
    manifest = Manifest([], path.parent)
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            entry = ManifestEntry(str(d["wav"]), str(d["id"]),
                                  [(int(s), int(e)) for s, e in d["segments"]], str(d["split"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorpusError(f"{path}:{lineno}: malformed manifest line ({exc})") from exc
        if entry.split not in SPLITS:
            raise CorpusError(f"{path}:{lineno}: unknown split {entry.split!r}")
        for s, e in entry.segments:
            if e < s or s < 0:
                raise CorpusError(f"{path}:{lineno}: invalid segment [{s}, {e}]")
        wav_path = manifest.wav_path(entry)
        if check_audio and wav_path.exists():
            T = _wav_frames(wav_path)
            try:
                manifest.alignment(entry, T)
            except AlignmentError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
        manifest.entries.append(entry)
    return manifest


def utterance_seed(master_seed: int, split: str, index: int):
    return np.random.SeedSequence([master_seed, SPLITS.index(split), index])


def build_dataset(spec: SynthSpec, out_dir) -> Manifest:
    """Generate every split, writing ``wav/*.wav``, ``manifest.jsonl`` and
    ``synth_spec.json`` under ``out_dir``."""
    out = Path(out_dir)
    try:
        (out / "wav").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CorpusError(f"cannot create output directory {out}: {exc}") from exc
    manifest = Manifest([], out)
    for split in SPLITS:
        for i in range(spec.counts.get(split, 0)):
            uid = f"{split}_{i:05d}"
            wave_form, align = synth_utterance(spec, utterance_seed(spec.seed, split, i), uid)
            rel = f"wav/{uid}.wav"
            try:
                write_wav(out / rel, wave_form)
            except OSError as exc:
                raise CorpusError(f"cannot write {out / rel}: {exc}") from exc
            manifest.entries.append(
                ManifestEntry(rel, uid, [(s, e) for s, e, _ in align.segments], split))
    try:
        write_manifest(out / "manifest.jsonl", manifest)
        (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    except OSError as exc:
        raise CorpusError(f"cannot write manifest in {out}: {exc}") from exc
    log.info("wrote %d utterances to %s", len(manifest), out)
    return manifest
