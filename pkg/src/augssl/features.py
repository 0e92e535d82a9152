"""Manifest -> feature matrices, with optional AFEA file cache."""

from __future__ import annotations

import logging
from pathlib import Path

from .dsp import MelConfig, StftConfig, log_mel, read_features, standardize_frames, write_features

log = logging.getLogger(__name__)


def feature_path(feature_dir, entry_id: str) -> Path:
    return Path(feature_dir) / f"{entry_id}.afea"


def entry_features(entry, stft_config=StftConfig(), mel_config=MelConfig(), standardize=False,
                   feature_dir=None):
    """Log-mel matrix for one manifest entry.

    A matching ``<feature_dir>/<id>.afea`` file is used when present;
    otherwise the WAV is decoded and featurized.
    """
    if feature_dir is not None:
        path = feature_path(feature_dir, entry.id)
        if path.exists():
            frames = read_features(path).frames
            return standardize_frames(frames) if standardize else frames
    return log_mel(entry.load_audio(), stft_config, mel_config, standardize).frames


def manifest_features(manifest, stft_config=StftConfig(), mel_config=MelConfig(), standardize=False,
                      feature_dir=None) -> list:
    return [entry_features(e, stft_config, mel_config, standardize, feature_dir) for e in manifest]


def featurize_manifest(manifest, out_dir, stft_config=StftConfig(), mel_config=MelConfig()) -> list:
    """Write one AFEA file per entry; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for e in manifest:
        feats = log_mel(e.load_audio(), stft_config, mel_config)
        path = feature_path(out_dir, e.id)
        write_features(feats, path)
        paths.append(path)
    log.info("wrote %d feature files to %s", len(paths), out_dir)
    return paths
