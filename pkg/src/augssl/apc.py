"""Autoregressive predictive coding: an LSTM stack reads log-mel frames and
a linear head predicts the frame ``time_shift`` steps ahead under MSE.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import nn
from ._validation import check_sequences
from .checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    time_shift: int = 3
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    seed: int = 0
    max_frames_per_utterance: int = 2000
    input_size: int = 80
    hidden_size: int = 512
    num_layers: int = 3
    grad_clip: Optional[float] = None
    checkpoint_every: int = 0
    standardize_features: bool = False

    def __post_init__(self):
        for name in ("time_shift", "batch_size", "max_frames_per_utterance", "input_size",
                     "hidden_size", "num_layers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "PretrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown pretrain config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "PretrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class ApcModel:
    """LSTM stack parameters plus the hidden -> frame projection."""

    def __init__(self, params: dict):
        self.params = params
        lstm = self.lstm
        self.input_size, self.hidden_size, self.num_layers = nn.lstm_dims(lstm)
        w = params["proj.weight"]
        if w.shape != (self.input_size, self.hidden_size):
            raise ValueError(f"projection shape {w.shape} inconsistent with LSTM "
                             f"({self.input_size}, {self.hidden_size})")

    @classmethod
    def initialize(cls, input_size=80, hidden_size=512, num_layers=3, seed=0) -> "ApcModel":
        rng = np.random.default_rng(seed)
        params = nn.prefixed(nn.init_lstm(input_size, hidden_size, num_layers, rng), "lstm")
        params.update(nn.prefixed(nn.init_linear(hidden_size, input_size, rng), "proj"))
        return cls(params)

    @property
    def lstm(self) -> dict:
        return nn.unprefixed(self.params, "lstm")

    @property
    def proj(self) -> dict:
        return nn.unprefixed(self.params, "proj")

    def copy(self) -> "ApcModel":
        return ApcModel({k: v.copy() for k, v in self.params.items()})

    def save(self, path, config: Optional[dict] = None) -> None:
        echo = {"kind": "apc", "input_size": self.input_size, "hidden_size": self.hidden_size,
                "num_layers": self.num_layers}
        echo["train_config"] = config or {}
        save_checkpoint(path, self.params, echo)

    @classmethod
    def load(cls, path) -> "ApcModel":
        params, config = load_checkpoint(path)
        if config.get("kind") != "apc":
            raise ValueError(f"{path} is not an APC checkpoint (kind={config.get('kind')!r})")
        return cls(params)


def _check_features(model: ApcModel, features: np.ndarray) -> np.ndarray:
    features = np.asarray(getattr(features, "frames", features), dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.input_size:
        raise ValueError(f"expected (T, {model.input_size}) features, got {features.shape}")
    return features


def apc_loss(model: ApcModel, features, n: int = 3):
    """MSE between projections of h_1..h_{T-n} and frames x_{1+n}..x_T.

    Returns ``(loss, grads)`` with grads keyed like ``model.params``.
    """
    x = _check_features(model, features)
    if x.shape[0] <= n:
        raise ValueError(f"sequence of {x.shape[0]} frames is too short for time shift {n}")
    loss, grads, _ = apc_batch_loss(model, [x], n)
    return loss, grads


def _pad(seqs: Sequence[np.ndarray]) -> np.ndarray:
    t_max = max(len(s) for s in seqs)
    out = np.zeros((len(seqs), t_max, seqs[0].shape[1]))
    for b, s in enumerate(seqs):
        out[b, :len(s)] = s
    return out


def apc_batch_loss(model: ApcModel, seqs: Sequence[np.ndarray], n: int = 3):
    """Mean over utterances of each utterance's native-length APC loss.

    Sequences are right-padded for a single batched pass; since the LSTM is
    causal and padded positions get zero loss weight, padding never
    touches the loss or the gradients.
    """
    lengths = [len(s) for s in seqs]
    if min(lengths) <= n:
        raise ValueError(f"every sequence needs more than {n} frames")
    x = _pad(seqs)
    batch, t_max, _ = x.shape
    lstm = model.lstm
    h, cache = nn.lstm_forward(lstm, x)
    h_used = h[:, :t_max - n]
    pred = nn.linear_forward(model.proj, h_used)
    grad_pred = np.zeros_like(pred)
    losses = []
    for b, length in enumerate(lengths):
        valid = length - n
        loss_b, g_b = nn.mse_loss(pred[b, :valid], x[b, n:n + valid])
        losses.append(loss_b)
        grad_pred[b, :valid] = g_b / batch
    proj_grads, grad_h_used = nn.linear_backward(model.proj, h_used, grad_pred)
    grad_h = np.zeros_like(h)
    grad_h[:, :t_max - n] = grad_h_used
    lstm_grads, _ = nn.lstm_backward(lstm, cache, grad_h)
    grads = nn.prefixed(lstm_grads, "lstm")
    grads.update(nn.prefixed(proj_grads, "proj"))
    return float(np.mean(losses)), grads, losses


def extract_repr(model: ApcModel, features) -> np.ndarray:
    """Final LSTM layer hidden states, shape (T, hidden_size)."""
    x = _check_features(model, features)
    h, _ = nn.lstm_forward(model.lstm, x)
    return h


def _train(model: ApcModel, seqs: list, config: PretrainConfig, checkpoint_path=None,
           verbose_every: int = 0):
    n = config.time_shift
    usable = []
    for i, s in enumerate(seqs):
        s = s[:config.max_frames_per_utterance]
        if len(s) <= n:
            log.warning("skipping utterance %d: %d frames <= time shift %d", i, len(s), n)
            continue
        usable.append(s)
    if not usable:
        raise ValueError("no utterance is long enough for pre-training")
    state = nn.AdamState(lr=config.learning_rate)
    curve = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(usable))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [usable[i] for i in order[start:start + config.batch_size]]
            _, grads, losses = apc_batch_loss(model, batch, n)
            if config.grad_clip:
                nn.clip_grad_norm(grads, config.grad_clip)
            nn.adam_step(model.params, grads, state)
            epoch_losses.extend(losses)
        mean = float(np.mean(epoch_losses))
        curve.append(mean)
        log.info("epoch %d/%d loss %.6f (%.2fs)", epoch + 1, config.epochs, mean, time.perf_counter() - t0)
        if checkpoint_path and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            model.save(Path(f"{checkpoint_path}.epoch{epoch + 1}"), config.to_dict())
    return curve, state


class ApcPretrainer(TransformerMixin, BaseEstimator):
    """Self-supervised APC pre-training as a transformer.

    ``fit`` takes a list of ``(T_i, input_size)`` log-mel matrices (labels
    are ignored); ``transform`` maps each sequence to its
    ``(T_i, hidden_size)`` final-layer representation.

    Attributes
    ----------
    model_ : ApcModel
    loss_curve_ : list of float
        Mean per-utterance loss for every epoch.
    """

    def __init__(self, hidden_size=512, num_layers=3, time_shift=3, epochs=100, batch_size=32,
                 learning_rate=1e-4, max_frames_per_utterance=2000, grad_clip=None, seed=0):
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.time_shift = time_shift
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_frames_per_utterance = max_frames_per_utterance
        self.grad_clip = grad_clip
        self.seed = seed

    def _config(self, input_size: int) -> PretrainConfig:
        return PretrainConfig(time_shift=self.time_shift, epochs=self.epochs, batch_size=self.batch_size,
                              learning_rate=self.learning_rate, seed=self.seed,
                              max_frames_per_utterance=self.max_frames_per_utterance,
                              input_size=input_size, hidden_size=self.hidden_size,
                              num_layers=self.num_layers, grad_clip=self.grad_clip)

    def fit(self, X, y=None):
        seqs = check_sequences(X)
        config = self._config(seqs[0].shape[1])
        self.model_ = ApcModel.initialize(config.input_size, config.hidden_size, config.num_layers,
                                          config.seed)
        self.loss_curve_, _ = _train(self.model_, seqs, config)
        self.n_features_in_ = config.input_size
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, n_features=self.n_features_in_)
        return [extract_repr(self.model_, s) for s in seqs]

    def score(self, X, y=None):
        """Negative mean APC loss (higher is better, sklearn convention)."""
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, n_features=self.n_features_in_)
        return -float(np.mean([apc_loss(self.model_, s, self.time_shift)[0] for s in seqs]))


def pretrain(config: PretrainConfig, manifest, out=None, loss_csv=None, feature_dir=None,
             model: Optional[ApcModel] = None):
    """Pre-train on every utterance in ``manifest`` (labels are never read).

    Returns ``(model, loss_curve)``; writes the ACKP checkpoint to ``out``
    and the per-epoch curve to ``loss_csv`` when given.
    """
    from .features import manifest_features

    if not len(manifest):
        raise ValueError("manifest is empty")
    seqs = manifest_features(manifest, standardize=config.standardize_features, feature_dir=feature_dir)
    if seqs[0].shape[1] != config.input_size:
        raise ValueError(f"features have {seqs[0].shape[1]} dims, config.input_size={config.input_size}")
    if model is None:
        model = ApcModel.initialize(config.input_size, config.hidden_size, config.num_layers, config.seed)
    curve, _ = _train(model, seqs, config, checkpoint_path=out)
    if out is not None:
        model.save(out, config.to_dict())
    if loss_csv is not None:
        write_loss_curve(curve, loss_csv)
    return model, curve


def write_loss_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, value in enumerate(curve, start=1):
            writer.writerow([i, repr(float(value))])
