"""Feature frontend: framing, STFT magnitude, mel filterbank and log-mel."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .audio_io import AudioBuffer, CANONICAL_SAMPLE_RATE

AFEA_MAGIC = b"AFEA"
AFEA_VERSION = 1
_AFEA_HEADER = struct.Struct("<4sIIIf")


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 400
    hop_length: int = 160
    fft_size: int = 512

    def __post_init__(self):
        if not 0 < self.hop_length <= self.window_length <= self.fft_size:
            raise ValueError("need 0 < hop_length <= window_length <= fft_size")
        if self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")


@dataclass(frozen=True)
class MelConfig:
    num_mels: int = 80
    f_min: float = 0.0
    f_max: float = None  # None -> sample_rate / 2
    log_floor: float = 1e-10

    def resolved_f_max(self, sample_rate: int) -> float:
        return sample_rate / 2.0 if self.f_max is None else float(self.f_max)


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_rate: float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError(f"frames must be T x D, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("feature frames must be finite")
        self.frames = frames

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def num_frames(num_samples: int, window_length: int, hop_length: int) -> int:
    """Frame count without padding: 1 + floor((N - win) / hop)."""
    if num_samples < window_length:
        return 0
    return 1 + (num_samples - window_length) // hop_length


def hann(length: int) -> np.ndarray:
    # periodic Hann, the usual choice for spectral analysis
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(length) / length)


def frame_signal(samples: np.ndarray, window_length: int, hop_length: int) -> np.ndarray:
    n = num_frames(len(samples), window_length, hop_length)
    idx = np.arange(window_length)[None, :] + hop_length * np.arange(n)[:, None]
    return samples[idx]


def stft_magnitude(buffer: AudioBuffer, config: StftConfig = StftConfig()) -> np.ndarray:
    """Hann-windowed magnitude spectrogram, shape (T, fft_size // 2 + 1)."""
    samples = buffer.samples if isinstance(buffer, AudioBuffer) else np.asarray(buffer, dtype=np.float64)
    if len(samples) < config.window_length:
        raise ValueError(
            f"buffer of {len(samples)} samples is shorter than one window ({config.window_length})")
    frames = frame_signal(samples, config.window_length, config.hop_length)
    frames = frames * hann(config.window_length)
    return np.abs(np.fft.rfft(frames, n=config.fft_size, axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(mel_config: MelConfig, sample_rate: int) -> np.ndarray:
    f_max = mel_config.resolved_f_max(sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(mel_config.f_min), hz_to_mel(f_max), mel_config.num_mels + 2))
    return edges[1:-1]


def mel_filterbank(mel_config: MelConfig = MelConfig(), stft_config: StftConfig = StftConfig(),
                   sample_rate: int = CANONICAL_SAMPLE_RATE) -> np.ndarray:
    """Triangular filters (peak 1) evenly spaced on the HTK mel scale."""
    f_max = mel_config.resolved_f_max(sample_rate)
    if mel_config.num_mels < 1:
        raise ValueError("num_mels must be >= 1")
    if not 0 <= mel_config.f_min < f_max <= sample_rate / 2.0:
        raise ValueError(f"need 0 <= f_min < f_max <= {sample_rate / 2.0}")
    edges = mel_to_hz(np.linspace(hz_to_mel(mel_config.f_min), hz_to_mel(f_max), mel_config.num_mels + 2))
    bins = np.arange(stft_config.fft_size // 2 + 1) * sample_rate / stft_config.fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (center - lower)
    falling = (upper - bins[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(
            f"num_mels={mel_config.num_mels} is too large for fft_size={stft_config.fft_size}: "
            f"filter(s) {empty.tolist()} cover no FFT bin")
    return fb


def mel_power(buffer: AudioBuffer, stft_config: StftConfig = StftConfig(),
              mel_config: MelConfig = MelConfig()) -> np.ndarray:
    """Mel-pooled power spectrum before log compression, shape (T, num_mels)."""
    mag = stft_magnitude(buffer, stft_config)
    fb = mel_filterbank(mel_config, stft_config, buffer.sample_rate)
    return (mag ** 2) @ fb.T


def log_mel(buffer: AudioBuffer, stft_config: StftConfig = StftConfig(),
            mel_config: MelConfig = MelConfig(), standardize: bool = False) -> FeatureSequence:
    frames = np.log(mel_power(buffer, stft_config, mel_config) + mel_config.log_floor)
    if standardize:
        frames = standardize_frames(frames)
    return FeatureSequence(frames, buffer.sample_rate / stft_config.hop_length)


def standardize_frames(frames: np.ndarray) -> np.ndarray:
    mean = frames.mean(axis=0, keepdims=True)
    std = frames.std(axis=0, keepdims=True)
    return (frames - mean) / np.where(std > 0, std, 1.0)


class LogMelExtractor(TransformerMixin, BaseEstimator):
    """Waveforms -> log-mel frame matrices.

    ``transform`` accepts a list of 1-D sample arrays or ``AudioBuffer``
    objects and returns a list of ``(T_i, num_mels)`` arrays. The extractor
    is stateless; ``fit`` only validates parameters.
    """

    def __init__(self, sample_rate=CANONICAL_SAMPLE_RATE, window_length=400, hop_length=160,
                 fft_size=512, num_mels=80, f_min=0.0, f_max=None, log_floor=1e-10,
                 standardize=False):
        self.sample_rate = sample_rate
        self.window_length = window_length
        self.hop_length = hop_length
        self.fft_size = fft_size
        self.num_mels = num_mels
        self.f_min = f_min
        self.f_max = f_max
        self.log_floor = log_floor
        self.standardize = standardize

    @property
    def stft_config(self) -> StftConfig:
        return StftConfig(self.window_length, self.hop_length, self.fft_size)

    @property
    def mel_config(self) -> MelConfig:
        return MelConfig(self.num_mels, self.f_min, self.f_max, self.log_floor)

    def fit(self, X=None, y=None):
        self.filterbank_ = mel_filterbank(self.mel_config, self.stft_config, self.sample_rate)
        self.frame_rate_ = self.sample_rate / self.hop_length
        return self

    def _as_buffer(self, x) -> AudioBuffer:
        if isinstance(x, AudioBuffer):
            if x.sample_rate != self.sample_rate:
                raise ValueError(
                    f"sample rate {x.sample_rate} != {self.sample_rate}; resampling is not supported")
            return x
        return AudioBuffer(np.asarray(x, dtype=np.float64), self.sample_rate)

    def transform(self, X):
        stft_cfg, mel_cfg = self.stft_config, self.mel_config
        return [log_mel(self._as_buffer(x), stft_cfg, mel_cfg, self.standardize).frames for x in X]


# --------------------------------------------------------------------------
# AFEA feature files


def write_features(features: FeatureSequence, path) -> None:
    frames = np.ascontiguousarray(features.frames, dtype="<f4")
    t, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(_AFEA_HEADER.pack(AFEA_MAGIC, AFEA_VERSION, t, d, float(features.frame_rate)))
        fh.write(frames.tobytes(order="C"))


def read_features(path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < _AFEA_HEADER.size:
        raise ValueError(f"{path}: truncated feature file")
    magic, version, t, d, frame_rate = _AFEA_HEADER.unpack_from(raw)
    if magic != AFEA_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != AFEA_VERSION:
        raise ValueError(f"{path}: unsupported AFEA version {version}")
    body = raw[_AFEA_HEADER.size:]
    if len(body) != 4 * t * d:
        raise ValueError(f"{path}: expected {t}x{d} float32 body, got {len(body)} bytes")
    frames = np.frombuffer(body, dtype="<f4").reshape(t, d)
    return FeatureSequence(frames.astype(np.float64), frame_rate)
