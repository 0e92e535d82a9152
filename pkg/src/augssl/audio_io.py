"""Audio and corpus ingestion.

WAV codec, JSON-lines manifests, frame-label files and a deterministic
synthetic phoneme corpus used for desk-scale experiments.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.io import wavfile

CANONICAL_SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0
SOURCE_TAGS = ("clean", "noise_aug", "pitch_aug", "mixed_corpus")


class AudioFormatError(ValueError):
    """Raised for WAV files this toolkit refuses to decode."""


class ManifestError(ValueError):
    pass


@dataclass
class AudioBuffer:
    """Mono PCM samples in [-1, 1] plus their sample rate."""

    samples: np.ndarray
    sample_rate: int = CANONICAL_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"AudioBuffer expects 1-D samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioBuffer samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = samples
        self.sample_rate = int(self.sample_rate)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def clipped(self) -> "AudioBuffer":
        return AudioBuffer(np.clip(self.samples, -1.0, 1.0), self.sample_rate)


def read_wav(path) -> AudioBuffer:
    """Decode a mono RIFF/WAVE file (16-bit PCM or 32-bit float)."""
    try:
        sample_rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError:
        raise
    except (ValueError, EOFError) as exc:
        raise AudioFormatError(f"{path}: malformed WAV header ({exc})") from exc
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: unsupported channel count {data.shape[1]}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise AudioFormatError(f"{path}: unsupported encoding {data.dtype}")
    return AudioBuffer(samples, sample_rate)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.round(np.asarray(samples, dtype=np.float64) * PCM16_SCALE)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_wav(buffer: AudioBuffer, path) -> None:
    """Encode ``buffer`` as 16-bit little-endian mono PCM; saturates at +-1."""
    path = Path(path)
    if path.parent and not path.parent.exists():
        raise OSError(f"cannot write {path}: directory does not exist")
    wavfile.write(os.fspath(path), buffer.sample_rate, quantize_pcm16(buffer.samples))


# --------------------------------------------------------------------------
# frame labels


@dataclass
class FrameLabels:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integer class indices")
        labels = labels.astype(np.int64)
        if int(self.num_classes) < 1:
            raise ValueError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"label out of range [0, {self.num_classes})")
        self.labels = labels
        self.num_classes = int(self.num_classes)

    def __len__(self) -> int:
        return self.labels.shape[0]


def write_labels(labels: FrameLabels, path) -> None:
    doc = {"num_classes": labels.num_classes, "labels": labels.labels.tolist()}
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def read_labels(path) -> FrameLabels:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return FrameLabels(np.asarray(doc["labels"], dtype=np.int64), doc["num_classes"])
    except KeyError as exc:
        raise ManifestError(f"{path}: label file missing key {exc}") from None


# --------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    id: str
    audio_path: Path
    duration_s: float
    labels_path: Optional[Path] = None
    source_tag: str = "clean"
    # free-form provenance (origin id, snr, semitones); optional on disk
    meta: Optional[dict] = None

    def __post_init__(self):
        if not self.id:
            raise ManifestError("entry id must be a non-empty string")
        if not self.duration_s > 0:
            raise ManifestError(f"entry {self.id!r}: duration_s must be > 0")
        if self.source_tag not in SOURCE_TAGS:
            raise ManifestError(f"entry {self.id!r}: unknown source_tag {self.source_tag!r}")
        self.audio_path = Path(self.audio_path)
        if self.labels_path is not None:
            self.labels_path = Path(self.labels_path)

    def load_audio(self) -> AudioBuffer:
        if not self.audio_path.exists():
            raise FileNotFoundError(f"entry {self.id!r}: missing audio file {self.audio_path}")
        return read_wav(self.audio_path)

    def load_labels(self) -> FrameLabels:
        if self.labels_path is None:
            raise ManifestError(f"entry {self.id!r} has no labels")
        return read_labels(self.labels_path)


@dataclass
class Manifest:
    entries: list = field(default_factory=list)

    def __post_init__(self):
        self.entries = list(self.entries)
        seen = set()
        for entry in self.entries:
            if entry.id in seen:
                raise ManifestError(f"duplicate id {entry.id!r}")
            seen.add(entry.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]

    @property
    def ids(self) -> list:
        return [e.id for e in self.entries]

    @property
    def total_duration_s(self) -> float:
        return float(sum(e.duration_s for e in self.entries))

    def concat(self, other: "Manifest") -> "Manifest":
        return Manifest(self.entries + list(other.entries))

    def save(self, path) -> None:
        save_manifest(self, path)


def _rel(path: Path, base: Path) -> str:
    try:
        return os.path.relpath(path, base).replace(os.sep, "/")
    except ValueError:  # different drive
        return str(path)


def save_manifest(manifest: Manifest, path) -> None:
    """Write one JSON object per line; paths are stored relative to the file."""
    path = Path(path)
    base = path.resolve().parent
    lines = []
    for e in manifest:
        rec = {
            "id": e.id,
            "audio_path": _rel(e.audio_path.resolve(), base),
            "duration_s": e.duration_s,
            "labels_path": None if e.labels_path is None else _rel(e.labels_path.resolve(), base),
            "source_tag": e.source_tag,
        }
        if e.meta:
            rec["meta"] = e.meta
        lines.append(json.dumps(rec, sort_keys=False) + "\n")
    path.write_text("".join(lines), encoding="utf-8")


def load_manifest(path) -> Manifest:
    path = Path(path)
    base = path.resolve().parent
    entries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ident = rec["id"]
                audio = base / rec["audio_path"]
                labels = rec.get("labels_path")
                entry = ManifestEntry(
                    id=ident,
                    audio_path=audio,
                    duration_s=float(rec["duration_s"]),
                    labels_path=None if labels is None else base / labels,
                    source_tag=rec.get("source_tag", "clean"),
                    meta=rec.get("meta"),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ManifestError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            if entry.id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {entry.id!r}")
            seen.add(entry.id)
            entries.append(entry)
    return Manifest(entries)


# --------------------------------------------------------------------------
# synthetic phoneme corpus

FORMANT_GRID_HZ = np.arange(200.0, 3500.0 + 1e-9, 150.0)


@dataclass(frozen=True)
class SynthCorpusSpec:
    num_utterances: int = 50
    utterance_duration_s: float = 2.0
    num_phoneme_classes: int = 5
    sample_rate: int = CANONICAL_SAMPLE_RATE
    seed: int = 0
    # selects the class -> frequency-triple table; a different value
    # gives a corpus with a different "phoneme inventory"
    inventory_seed: int = 0
    # scales every class frequency; != 1 gives an "accented" corpus
    formant_scale: float = 1.0
    id_prefix: str = "utt"
    segment_ms: tuple = (100.0, 400.0)
    component_amplitude: float = 0.08
    noise_std: float = 0.002

    def validate(self) -> None:
        if self.num_utterances < 1 or self.num_phoneme_classes < 1:
            raise ValueError("num_utterances and num_phoneme_classes must be positive")
        if not self.utterance_duration_s > 0 or self.sample_rate <= 0:
            raise ValueError("utterance_duration_s and sample_rate must be positive")
        if not self.formant_scale > 0:
            raise ValueError("formant_scale must be positive")
        if self.num_phoneme_classes > len(list(itertools.combinations(FORMANT_GRID_HZ, 3))):
            raise ValueError("too many phoneme classes for the formant grid")


def phoneme_inventory(num_classes: int, inventory_seed: int = 0) -> np.ndarray:
    """Return a (num_classes, 3) table of per-class frequency triples.

    Triples are distinct combinations of a 150 Hz grid over 200-3500 Hz, so
    any two classes differ by at least 150 Hz in some component.
    """
    combos = np.array(list(itertools.combinations(FORMANT_GRID_HZ, 3)))
    # one component from each third of the band, so every class has
    # energy spread across the mel axis
    lo, hi = FORMANT_GRID_HZ[7], FORMANT_GRID_HZ[15]
    spread = combos[(combos[:, 0] < lo) & (combos[:, 1] >= lo) & (combos[:, 1] < hi) & (combos[:, 2] >= hi)]
    pool = spread if num_classes <= len(spread) else combos
    rng = np.random.default_rng(inventory_seed)
    pick = rng.choice(len(pool), size=num_classes, replace=False)
    return pool[pick]


def _synth_utterance(spec: SynthCorpusSpec, index: int, inventory: np.ndarray,
                     win: int, hop: int):
    rng = np.random.default_rng([spec.seed, index])
    sr = spec.sample_rate
    n = int(round(spec.utterance_duration_s * sr))
    samples = np.zeros(n)
    sample_class = np.zeros(n, dtype=np.int64)
    lo_ms, hi_ms = spec.segment_ms
    start = 0
    while start < n:
        seg_len = int(round(rng.uniform(lo_ms, hi_ms) * sr / 1000.0))
        stop = min(n, start + max(seg_len, 1))
        cls = int(rng.integers(spec.num_phoneme_classes))
        phases = rng.uniform(0.0, 2 * np.pi, size=3)
        t = np.arange(start, stop) / sr
        seg = np.sin(2 * np.pi * inventory[cls][:, None] * t[None, :] + phases[:, None]).sum(axis=0)
        samples[start:stop] = spec.component_amplitude * seg
        sample_class[start:stop] = cls
        start = stop
    samples += spec.noise_std * rng.standard_normal(n)
    samples = np.clip(samples, -1.0, 1.0)

    n_frames = 1 + (n - win) // hop if n >= win else 0
    centers = np.arange(n_frames) * hop + win // 2
    labels = sample_class[centers]
    return AudioBuffer(samples, sr), FrameLabels(labels, spec.num_phoneme_classes)


def generate_synth_corpus(spec: SynthCorpusSpec, out_dir, stft_config=None) -> Manifest:
    """Write a labelled synthetic corpus under ``out_dir`` and return its manifest.

    Each utterance concatenates random-length segments; a segment is the
    class's frequency triple plus low-level Gaussian noise. Frame labels
    follow the dsp frame grid (label = class at the frame centre sample).
    The manifest is also written to ``out_dir/manifest.jsonl``.
    """
    from .dsp import StftConfig

    spec.validate()
    cfg = stft_config or StftConfig()
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    inventory = phoneme_inventory(spec.num_phoneme_classes, spec.inventory_seed) * spec.formant_scale
    if inventory.max() >= spec.sample_rate / 2:
        raise ValueError("formant_scale pushes class frequencies above Nyquist")
    entries = []
    for i in range(spec.num_utterances):
        buf, labels = _synth_utterance(spec, i, inventory, cfg.window_length, cfg.hop_length)
        ident = f"{spec.id_prefix}_{i:05d}"
        wav_path = out_dir / "wav" / f"{ident}.wav"
        lab_path = out_dir / "labels" / f"{ident}.json"
        write_wav(buf, wav_path)
        write_labels(labels, lab_path)
        entries.append(ManifestEntry(ident, wav_path, buf.duration_s, lab_path, "clean"))
    manifest = Manifest(entries)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def generate_noise_corpus(out_dir, num_files: int = 4, duration_s: float = 1.5,
                          sample_rate: int = CANONICAL_SAMPLE_RATE, seed: int = 0,
                          id_prefix: str = "noise") -> Manifest:
    """Write a small bank of background-noise WAVs (white, brown, hum, babble-ish)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    entries = []
    for i in range(num_files):
        rng = np.random.default_rng([seed, i])
        kind = i % 4
        white = rng.standard_normal(n)
        if kind == 0:
            x = white
        elif kind == 1:
            x = np.cumsum(white)
            x -= np.linspace(x[0], x[-1], n)
        elif kind == 2:
            f0 = rng.uniform(50.0, 120.0)
            x = sum(np.sin(2 * np.pi * f0 * k * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 6))
            x = x + 0.1 * white
        else:
            freqs = rng.uniform(150.0, 3000.0, size=12)
            x = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) * (1 + 0.5 * np.sin(2 * np.pi * rng.uniform(1, 5) * t))
                    for f in freqs)
        x = 0.3 * x / np.max(np.abs(x))
        ident = f"{id_prefix}_{i:03d}"
        path = out_dir / f"{ident}.wav"
        write_wav(AudioBuffer(x, sample_rate), path)
        entries.append(ManifestEntry(ident, path, n / sample_rate, None, "clean"))
    manifest = Manifest(entries)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def read_manifest_audio(manifest: Iterable[ManifestEntry]) -> list:
    return [e.load_audio() for e in manifest]


def check_sample_rate(buffers: Sequence[AudioBuffer], expected: int = CANONICAL_SAMPLE_RATE) -> None:
    for b in buffers:
        if b.sample_rate != expected:
            raise ValueError(f"sample rate {b.sample_rate} != {expected}; resampling is not supported")
