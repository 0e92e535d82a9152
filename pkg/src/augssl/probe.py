"""Downstream frame-level phoneme recognition with a linear head on APC
representations (log-softmax + cross-entropy, trained with Adam).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import nn
from ._validation import check_label_sequences, check_sequences
from .apc import ApcModel, _pad
from .checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["run_id", "pretrain_hours", "strategy", "ratio", "frame_accuracy_percent", "total_frames"]


@dataclass
class FinetuneConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-4
    backbone_frozen: bool = True
    seed: int = 0
    standardize_features: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 are required")

    @classmethod
    def from_dict(cls, doc: dict) -> "FinetuneConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown finetune config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "FinetuneConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class ProbeModel:
    """Linear head over a backbone; ``backbone=None`` feeds features straight in."""

    def __init__(self, backbone: Optional[ApcModel], head: dict, backbone_frozen: bool = True):
        self.backbone = backbone
        self.head = head
        self.backbone_frozen = backbone_frozen
        in_dim = backbone.hidden_size if backbone is not None else head["weight"].shape[1]
        if head["weight"].shape[1] != in_dim:
            raise ValueError(f"head input width {head['weight'].shape[1]} != backbone width {in_dim}")
        if self.num_classes < 2:
            raise ValueError("a probe needs at least 2 classes")

    @property
    def num_classes(self) -> int:
        return self.head["weight"].shape[0]

    @property
    def input_size(self) -> int:
        return self.backbone.input_size if self.backbone is not None else self.head["weight"].shape[1]

    @classmethod
    def initialize(cls, backbone: Optional[ApcModel], num_classes: int, seed: int = 0,
                   backbone_frozen: bool = True, input_size: int = 80) -> "ProbeModel":
        in_dim = backbone.hidden_size if backbone is not None else input_size
        head = nn.init_linear(in_dim, num_classes, np.random.default_rng([seed, 1]))
        return cls(backbone, head, backbone_frozen)

    def representations(self, features: np.ndarray) -> np.ndarray:
        if self.backbone is None:
            return features
        h, _ = nn.lstm_forward(self.backbone.lstm, features)
        return h

    def logits(self, features) -> np.ndarray:
        x = np.asarray(getattr(features, "frames", features), dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise ValueError(f"expected (T, {self.input_size}) features, got {x.shape}")
        return nn.linear_forward(self.head, self.representations(x))

    def params(self) -> dict:
        out = nn.prefixed(self.head, "head")
        if self.backbone is not None:
            out.update(self.backbone.params)
        return out

    def save(self, path, config: Optional[dict] = None) -> None:
        echo = {"kind": "probe", "backbone": "apc" if self.backbone is not None else "identity",
                "backbone_frozen": self.backbone_frozen, "num_classes": self.num_classes,
                "input_size": self.input_size, "train_config": config or {}}
        save_checkpoint(path, self.params(), echo)

    @classmethod
    def load(cls, path) -> "ProbeModel":
        params, config = load_checkpoint(path)
        if config.get("kind") != "probe":
            raise ValueError(f"{path} is not a probe checkpoint")
        head = nn.unprefixed(params, "head")
        backbone = None
        if config["backbone"] == "apc":
            backbone = ApcModel({k: v for k, v in params.items() if not k.startswith("head.")})
        return cls(backbone, head, config.get("backbone_frozen", True))


def predict(probe: ProbeModel, features) -> np.ndarray:
    """Per-frame argmax of the log-softmax over head outputs."""
    return np.argmax(nn.log_softmax(probe.logits(features)), axis=1)


def _batch_loss(probe: ProbeModel, xs, ys, reps=None):
    """Cross-entropy averaged over every frame in the batch, and its grads."""
    total = sum(len(y) for y in ys)
    train_backbone = probe.backbone is not None and not probe.backbone_frozen
    if train_backbone:
        x = _pad(xs)
        h, cache = nn.lstm_forward(probe.backbone.lstm, x)
        h_list = [h[b, :len(s)] for b, s in enumerate(xs)]
    else:
        h_list = reps
    flat_h = np.concatenate(h_list)
    flat_y = np.concatenate(ys)
    logits = nn.linear_forward(probe.head, flat_h)
    loss, g_logits = nn.cross_entropy_from_log_probs(nn.log_softmax(logits), flat_y)
    head_grads, g_h = nn.linear_backward(probe.head, flat_h, g_logits)
    grads = nn.prefixed(head_grads, "head")
    if train_backbone:
        grad_h = np.zeros_like(h)
        pos = 0
        for b, s in enumerate(xs):
            grad_h[b, :len(s)] = g_h[pos:pos + len(s)]
            pos += len(s)
        lstm_grads, _ = nn.lstm_backward(probe.backbone.lstm, cache, grad_h)
        grads.update(nn.prefixed(lstm_grads, "lstm"))
    return loss, grads, total


def train_probe(probe: ProbeModel, xs: list, ys: list, config: FinetuneConfig) -> list:
    """Fit the head (and the LSTM if unfrozen) in place; returns the loss curve."""
    frozen = probe.backbone is None or probe.backbone_frozen
    reps = [probe.representations(x) for x in xs] if frozen else None
    params = probe.params()
    trainable = {k: v for k, v in params.items()
                 if k.startswith("head.") or (not frozen and k.startswith("lstm."))}
    state = nn.AdamState(lr=config.learning_rate)
    curve = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 2, epoch]).permutation(len(xs))
        losses, frames = [], []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads, total = _batch_loss(
                probe, [xs[i] for i in idx], [ys[i] for i in idx],
                None if reps is None else [reps[i] for i in idx])
            nn.adam_step(trainable, grads, state)
            losses.append(loss * total)
            frames.append(total)
        curve.append(float(np.sum(losses) / np.sum(frames)))
        log.info("finetune epoch %d/%d loss %.6f", epoch + 1, config.epochs, curve[-1])
    return curve


class PhonemeProbe(ClassifierMixin, BaseEstimator):
    """Frame-level phoneme classifier on top of an (optionally frozen) APC backbone.

    ``X`` is a list of ``(T_i, D)`` log-mel matrices, ``y`` the matching list
    of per-frame label arrays. ``backbone`` may be an :class:`ApcModel`, a
    fitted :class:`~augssl.apc.ApcPretrainer`, or ``None`` to classify the
    features directly.
    """

    def __init__(self, backbone=None, num_classes=None, epochs=20, batch_size=32,
                 learning_rate=1e-4, backbone_frozen=True, seed=0):
        self.backbone = backbone
        self.num_classes = num_classes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.backbone_frozen = backbone_frozen
        self.seed = seed

    def _backbone_model(self) -> Optional[ApcModel]:
        bb = self.backbone
        if bb is None:
            return None
        if hasattr(bb, "model_"):
            bb = bb.model_
        if not isinstance(bb, ApcModel):
            raise TypeError(f"backbone must be an ApcModel or fitted ApcPretrainer, got {type(bb)}")
        return bb.copy() if not self.backbone_frozen else bb

    def fit(self, X, y):
        seqs = check_sequences(X)
        labels = check_label_sequences(y, seqs, self.num_classes)
        k = self.num_classes or int(max(l.max() for l in labels if l.size)) + 1
        self.classes_ = np.arange(k)
        config = FinetuneConfig(self.epochs, self.batch_size, self.learning_rate, self.backbone_frozen, self.seed)
        self.probe_ = ProbeModel.initialize(self._backbone_model(), k, self.seed, self.backbone_frozen,
                                            input_size=seqs[0].shape[1])
        self.loss_curve_ = train_probe(self.probe_, seqs, labels, config)
        self.n_features_in_ = seqs[0].shape[1]
        return self

    def predict_log_proba(self, X):
        check_is_fitted(self, "probe_")
        return [nn.log_softmax(self.probe_.logits(s)) for s in check_sequences(X, self.n_features_in_)]

    def predict_proba(self, X):
        return [np.exp(lp) for lp in self.predict_log_proba(X)]

    def predict(self, X):
        check_is_fitted(self, "probe_")
        return [predict(self.probe_, s) for s in check_sequences(X, self.n_features_in_)]

    def score(self, X, y, sample_weight=None):
        """Frame accuracy in [0, 1], pooled over all frames of all sequences."""
        preds = self.predict(X)
        labels = check_label_sequences(y, preds)
        correct = sum(int(np.sum(p == l)) for p, l in zip(preds, labels))
        return correct / sum(len(l) for l in labels)


# --------------------------------------------------------------------------
# manifest-level entry points


def _labeled_data(manifest, feature_dir=None, standardize=False):
    from .features import entry_features

    xs, ys = [], []
    for e in manifest:
        if e.labels_path is None:
            raise ValueError(f"utterance {e.id!r} has no labels")
        x = entry_features(e, standardize=standardize, feature_dir=feature_dir)
        lab = e.load_labels()
        if len(lab) != len(x):
            raise ValueError(f"utterance {e.id!r}: {len(lab)} labels for {len(x)} frames")
        xs.append(x)
        ys.append(lab)
    if not xs:
        raise ValueError("labelled manifest is empty")
    return xs, ys


def finetune(checkpoint, labeled_manifest, config: FinetuneConfig = FinetuneConfig(),
             num_classes: Optional[int] = None, feature_dir=None):
    """Train a probe on ``labeled_manifest``; returns ``(probe, loss_curve)``.

    ``checkpoint`` is an ACKP path, an :class:`ApcModel`, or ``None`` for the
    identity backbone.
    """
    if checkpoint is None or isinstance(checkpoint, ApcModel):
        backbone = checkpoint
    else:
        backbone = ApcModel.load(checkpoint)
    if backbone is not None and not config.backbone_frozen:
        backbone = backbone.copy()
    xs, labs = _labeled_data(labeled_manifest, feature_dir, config.standardize_features)
    k = num_classes or labs[0].num_classes
    for e, lab in zip(labeled_manifest, labs):
        if lab.num_classes != k:
            raise ValueError(f"utterance {e.id!r} declares {lab.num_classes} classes, expected {k}")
    probe = ProbeModel.initialize(backbone, k, config.seed, config.backbone_frozen,
                                  input_size=xs[0].shape[1])
    curve = train_probe(probe, xs, [lab.labels for lab in labs], config)
    return probe, curve


@dataclass
class EvalReport:
    frame_accuracy_percent: float
    per_class_accuracy: list
    total_frames: int
    confusion: np.ndarray = field(repr=False)

    @property
    def correct_frames(self) -> int:
        return int(np.trace(self.confusion))

    def to_dict(self) -> dict:
        return {"frame_accuracy_percent": self.frame_accuracy_percent,
                "per_class_accuracy": self.per_class_accuracy,
                "total_frames": self.total_frames,
                "confusion": self.confusion.tolist()}


def report_from_predictions(preds, labels, num_classes: int) -> EvalReport:
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, l in zip(preds, labels):
        np.add.at(confusion, (np.asarray(l, dtype=np.int64), np.asarray(p, dtype=np.int64)), 1)
    total = int(confusion.sum())
    if total == 0:
        raise ValueError("no frames to evaluate")
    per_class = []
    for c in range(num_classes):
        n = int(confusion[c].sum())
        per_class.append(None if n == 0 else 100.0 * int(confusion[c, c]) / n)
    acc = 100.0 * int(np.trace(confusion)) / total
    return EvalReport(acc, per_class, total, confusion)


def evaluate(probe: ProbeModel, test_manifest, feature_dir=None, standardize=False) -> EvalReport:
    xs, labs = _labeled_data(test_manifest, feature_dir, standardize)
    preds = [predict(probe, x) for x in xs]
    return report_from_predictions(preds, [lab.labels for lab in labs], probe.num_classes)


def write_report_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in REPORT_COLUMNS})
