"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_sequences(X, n_features=None, min_length=1, name="X"):
    """Validate a ragged batch: a non-empty list of finite 2-D float arrays.

    A single 2-D array is accepted as a batch of one sequence.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    try:
        seqs = [np.asarray(getattr(x, "frames", x), dtype=np.float64) for x in X]
    except TypeError:
        raise TypeError(f"{name} must be a list of (T, D) arrays") from None
    if not seqs:
        raise ValueError(f"{name} is empty")
    width = seqs[0].shape[-1] if seqs[0].ndim == 2 else None
    for i, s in enumerate(seqs):
        if s.ndim != 2:
            raise ValueError(f"{name}[{i}] must be 2-D (T, D), got shape {s.shape}")
        if s.shape[1] != width:
            raise ValueError(f"{name}[{i}] has {s.shape[1]} features, expected {width}")
        if n_features is not None and s.shape[1] != n_features:
            raise ValueError(f"{name}[{i}] has {s.shape[1]} features, model expects {n_features}")
        if s.shape[0] < min_length:
            raise ValueError(f"{name}[{i}] has {s.shape[0]} frames, need >= {min_length}")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"{name}[{i}] contains non-finite values")
    return seqs


def check_label_sequences(y, seqs, num_classes=None, ids=None):
    """Validate per-frame integer labels against their feature sequences."""
    if isinstance(y, np.ndarray) and y.ndim == 1:
        y = [y]
    labels = [np.asarray(getattr(v, "labels", v)) for v in y]
    if len(labels) != len(seqs):
        raise ValueError(f"got {len(labels)} label sequences for {len(seqs)} feature sequences")
    out = []
    for i, (lab, s) in enumerate(zip(labels, seqs)):
        who = ids[i] if ids is not None else i
        if lab.ndim != 1:
            raise ValueError(f"labels for {who} must be 1-D")
        if len(lab) != len(s):
            raise ValueError(f"utterance {who}: {len(lab)} labels for {len(s)} frames")
        if lab.size and not np.all(lab == np.round(lab)):
            raise ValueError(f"utterance {who}: labels must be integers")
        lab = lab.astype(np.int64)
        if lab.size and lab.min() < 0:
            raise ValueError(f"utterance {who}: negative label")
        if num_classes is not None and lab.size and lab.max() >= num_classes:
            raise ValueError(f"utterance {who}: label {lab.max()} out of range [0, {num_classes})")
        out.append(lab)
    return out
