"""Augmentation operators (noise at a target SNR, pitch shift) and the
planner that turns a base manifest into an augmented pre-training manifest.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .audio_io import AudioBuffer, Manifest, ManifestEntry, save_manifest, write_wav
from .dsp import frame_signal

log = logging.getLogger(__name__)

SNR_CHOICES_DB = (5.0, 10.0, 15.0)
REFERENCE_RATIOS = (1, 2, 3, 6, 12, 16, 20)
STRATEGIES = ("noise", "pitch", "noise_pitch_mix", "corpus_mix", "clean_extra")
# short names accepted on the command line
STRATEGY_ALIASES = {"mix": "noise_pitch_mix", "corpus": "corpus_mix"}

PV_FFT = 1024
PV_HOP = 256


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    """10 log10 of the full-utterance mean-square ratio."""
    return 10.0 * np.log10(_power(signal) / _power(noise))


def tile_noise(noise: np.ndarray, length: int, offset: int = 0) -> np.ndarray:
    idx = (int(offset) + np.arange(length)) % len(noise)
    return noise[idx]


def mix_noise(clean: AudioBuffer, noise: AudioBuffer, snr_db: float, offset: int = 0) -> AudioBuffer:
    """Add ``noise`` to ``clean`` scaled so the mixture has the requested SNR.

    Noise shorter than the clean signal is wrapped around starting at
    ``offset``. The result is clipped to [-1, 1].
    """
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(f"sample-rate mismatch: {clean.sample_rate} vs {noise.sample_rate}")
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    p_clean = _power(clean.samples)
    if p_clean <= 0:
        raise ValueError("clean signal is silent; SNR is undefined")
    tiled = tile_noise(noise.samples, len(clean), offset)
    p_noise = _power(tiled)
    if p_noise <= 0:
        raise ValueError("noise signal is silent")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = clean.samples + gain * tiled
    return AudioBuffer(np.clip(mixed, -1.0, 1.0), clean.sample_rate)


# --------------------------------------------------------------------------
# pitch shifting: phase-vocoder stretch, then linear-interpolation resample


def _pv_window(n_fft: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)


def _stft(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    padded = np.pad(x, n_fft // 2, mode="reflect")
    frames = frame_signal(padded, n_fft, hop) * _pv_window(n_fft)
    return np.fft.rfft(frames, axis=1)


def _istft(spec: np.ndarray, n_fft: int, hop: int, length: int) -> np.ndarray:
    window = _pv_window(n_fft)
    frames = np.fft.irfft(spec, n=n_fft, axis=1) * window
    n_out = n_fft + hop * (len(frames) - 1)
    out = np.zeros(n_out)
    wsum = np.zeros(n_out)
    for t, frame in enumerate(frames):
        out[t * hop:t * hop + n_fft] += frame
        wsum[t * hop:t * hop + n_fft] += window ** 2
    out /= np.where(wsum > 1e-8, wsum, 1.0)
    out = out[n_fft // 2:]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out[:length]


def phase_vocoder(spec: np.ndarray, rate: float, hop: int) -> np.ndarray:
    """Resample STFT frames at ``rate`` (>1 is faster) keeping phase coherent."""
    n_frames, n_bins = spec.shape
    n_fft = 2 * (n_bins - 1)
    steps = np.arange(0.0, n_frames, rate)
    expected = 2 * np.pi * hop * np.arange(n_bins) / n_fft
    padded = np.vstack([spec, np.zeros((2, n_bins), dtype=spec.dtype)])
    phase = np.angle(spec[0])
    out = np.empty((len(steps), n_bins), dtype=np.complex128)
    for t, step in enumerate(steps):
        k = int(step)
        frac = step - k
        left, right = padded[k], padded[k + 1]
        mag = (1.0 - frac) * np.abs(left) + frac * np.abs(right)
        out[t] = mag * np.exp(1j * phase)
        dphi = np.angle(right) - np.angle(left) - expected
        dphi -= 2 * np.pi * np.round(dphi / (2 * np.pi))
        phase = phase + expected + dphi
    return out


def time_stretch(samples: np.ndarray, factor: float, n_fft: int = PV_FFT, hop: int = PV_HOP) -> np.ndarray:
    """Lengthen ``samples`` by ``factor`` without changing its frequencies."""
    spec = _stft(samples, n_fft, hop)
    stretched = phase_vocoder(spec, 1.0 / factor, hop)
    return _istft(stretched, n_fft, hop, int(round(len(samples) * factor)))


def pitch_shift(buffer: AudioBuffer, semitones: float) -> AudioBuffer:
    """Scale every frequency by 2**(semitones/12); output length equals input length."""
    if not np.isfinite(semitones) or abs(semitones) > 12:
        raise ValueError(f"pitch shift of {semitones} semitones is outside [-12, 12]")
    n = len(buffer)
    if n < 4 * PV_FFT:
        raise ValueError(f"buffer of {n} samples is shorter than 4 analysis windows ({4 * PV_FFT})")
    ratio = 2.0 ** (semitones / 12.0)
    stretched = time_stretch(buffer.samples, ratio)
    shifted = np.interp(np.arange(n) * ratio, np.arange(len(stretched)), stretched)
    return AudioBuffer(np.clip(shifted, -1.0, 1.0), buffer.sample_rate)


# --------------------------------------------------------------------------
# plan expansion


@dataclass
class NoiseAugSpec:
    noise_manifest: Manifest
    snr_choices_db: tuple = SNR_CHOICES_DB
    seed: int = 0

    def __post_init__(self):
        if not len(self.snr_choices_db) or not np.all(np.isfinite(self.snr_choices_db)):
            raise ValueError("snr_choices_db must be a non-empty list of finite values")
        if not len(self.noise_manifest):
            raise ValueError("noise manifest is empty")


@dataclass
class PitchAugSpec:
    semitone_range: tuple = (-2.0, 2.0)
    dead_zone: float = 0.25
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.semitone_range
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise ValueError(f"degenerate semitone range {self.semitone_range}")
        if hi <= self.dead_zone and lo >= -self.dead_zone:
            raise ValueError("semitone range lies entirely inside the dead zone")

    def draw(self, rng: np.random.Generator) -> float:
        lo, hi = self.semitone_range
        sides = []
        if hi > self.dead_zone:
            sides.append((max(self.dead_zone, lo), hi))
        if lo < -self.dead_zone:
            sides.append((lo, min(-self.dead_zone, hi)))
        a, b = sides[int(rng.integers(len(sides)))]
        return float(rng.uniform(a, b))


@dataclass
class AugmentationPlan:
    base: Manifest
    strategy: str
    ratio: int = 1
    seed: int = 0
    noise: Optional[NoiseAugSpec] = None
    pitch: Optional[PitchAugSpec] = field(default_factory=PitchAugSpec)
    other: Optional[Manifest] = None
    # apply pitch and noise to every utterance instead of choosing one
    stack_effects: bool = False

    def __post_init__(self):
        self.strategy = STRATEGY_ALIASES.get(self.strategy, self.strategy)
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if int(self.ratio) != self.ratio or self.ratio < 1:
            raise ValueError(f"ratio must be a positive integer, got {self.ratio}")
        self.ratio = int(self.ratio)
        if self.strategy in ("noise", "noise_pitch_mix") and self.noise is None:
            raise ValueError(f"strategy {self.strategy!r} needs a noise manifest")
        if self.strategy in ("pitch", "noise_pitch_mix") and self.pitch is None:
            raise ValueError(f"strategy {self.strategy!r} needs a pitch spec")
        if self.strategy in ("corpus_mix", "clean_extra") and self.other is None:
            raise ValueError(f"strategy {self.strategy!r} needs an other manifest")


_STRATEGY_CODE = {name: i for i, name in enumerate(STRATEGIES)}


class _NoiseBank:
    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self._cache = {}

    def __len__(self):
        return len(self.manifest)

    def get(self, i: int) -> AudioBuffer:
        if i not in self._cache:
            self._cache[i] = self.manifest[i].load_audio()
        return self._cache[i]


def _augment_one(plan: AugmentationPlan, bank: Optional[_NoiseBank], entry: ManifestEntry,
                 utt_index: int, copy: int, out_dir: Path) -> ManifestEntry:
    rng = np.random.default_rng([plan.seed, _STRATEGY_CODE[plan.strategy], copy, utt_index])
    if plan.strategy == "noise_pitch_mix":
        effects = ["pitch", "noise"] if plan.stack_effects else [("pitch", "noise")[int(rng.random() < 0.5)]]
    else:
        effects = [plan.strategy]

    buf = entry.load_audio()
    meta = {"origin": entry.id, "copy": copy}
    for effect in effects:
        if effect == "pitch":
            semis = plan.pitch.draw(rng)
            buf = pitch_shift(buf, semis)
            meta["semitones"] = semis
        else:
            snr = float(plan.noise.snr_choices_db[int(rng.integers(len(plan.noise.snr_choices_db)))])
            which = int(rng.integers(len(bank)))
            noise = bank.get(which)
            offset = int(rng.integers(len(noise)))
            buf = mix_noise(buf, noise, snr, offset)
            meta.update(snr_db=snr, noise_id=bank.manifest[which].id, noise_offset=offset)
    tag = "noise_aug" if effects[-1] == "noise" else "pitch_aug"
    ident = f"{entry.id}.{tag}{copy}"
    path = out_dir / "wav" / f"{ident}.wav"
    write_wav(buf, path)
    return ManifestEntry(ident, path, buf.duration_s, entry.labels_path, tag, meta)


def _take_hours(plan: AugmentationPlan) -> list:
    target = plan.ratio * plan.base.total_duration_s
    tag = "mixed_corpus" if plan.strategy == "corpus_mix" else "clean"
    suffix = "mix" if plan.strategy == "corpus_mix" else "extra"
    base_ids = set(plan.base.ids)
    taken, total = [], 0.0
    for e in plan.other:
        if total >= target * 0.995:
            break
        if plan.strategy == "clean_extra" and e.id in base_ids:
            continue
        ident = f"{e.id}.{suffix}"
        taken.append(ManifestEntry(ident, e.audio_path, e.duration_s, e.labels_path, tag,
                                   {"origin": e.id}))
        total += e.duration_s
    if total < target * 0.99:
        raise ValueError(
            f"other manifest holds {total:.2f} s but ratio {plan.ratio} needs {target:.2f} s")
    return taken


def expand_plan(plan: AugmentationPlan, out_dir=None, jobs: int = 1) -> Manifest:
    """Materialize ``plan``: base entries first, then ``ratio`` augmented copies.

    Synthetic strategies write one WAV per augmented utterance under
    ``out_dir/wav``; corpus strategies reference the other manifest's
    files. Random draws are keyed on (seed, strategy, copy, utterance), so
    output does not depend on ``jobs``. The manifest is saved as
    ``out_dir/manifest.jsonl`` when ``out_dir`` is given.
    """
    if not len(plan.base):
        raise ValueError("base manifest is empty")
    if plan.strategy in ("corpus_mix", "clean_extra"):
        added = _take_hours(plan)
    else:
        if out_dir is None:
            raise ValueError("out_dir is required for synthetic augmentation")
        out_dir = Path(out_dir)
        (out_dir / "wav").mkdir(parents=True, exist_ok=True)
        bank = _NoiseBank(plan.noise.noise_manifest) if plan.noise is not None else None
        jobs_list = [(e, i, c) for c in range(1, plan.ratio + 1) for i, e in enumerate(plan.base)]
        if bank is not None:
            for i in range(len(bank)):
                bank.get(i)

        def work(args):
            e, i, c = args
            return _augment_one(plan, bank, e, i, c, out_dir)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                added = list(pool.map(work, jobs_list))
        else:
            added = [work(a) for a in jobs_list]
    manifest = Manifest(list(plan.base) + added)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        save_manifest(manifest, Path(out_dir) / "manifest.jsonl")
    log.info("expanded %d base entries with strategy %s x%d -> %d entries",
             len(plan.base), plan.strategy, plan.ratio, len(manifest))
    return manifest
