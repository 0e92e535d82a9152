import logging

import numpy as np
import pytest

from augssl import nn
from augssl.apc import ApcModel, ApcPretrainer, PretrainConfig, apc_batch_loss, apc_loss, extract_repr, pretrain
from augssl.checkpoint import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from augssl.features import featurize_manifest, manifest_features


def tiny(seed=0, d=4, h=8, layers=3):
    return ApcModel.initialize(d, h, layers, seed)


def test_defaults():
    cfg = PretrainConfig()
    assert (cfg.time_shift, cfg.batch_size, cfg.learning_rate, cfg.hidden_size, cfg.num_layers) == (3, 32, 1e-4, 512, 3)
    assert extract_repr(ApcModel.initialize(seed=1), np.zeros((4, 80))).shape == (4, 512)


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        PretrainConfig.from_dict({"hiden_size": 3})
    with pytest.raises(ValueError):
        PretrainConfig(time_shift=0)


def test_perfect_prediction_gives_zero_loss():
    model = tiny()
    model.params["proj.weight"][:] = 0.0
    model.params["proj.bias"][:] = 0.7
    loss, _ = apc_loss(model, np.full((9, 4), 0.7), 3)
    assert loss == 0.0


def test_boundary_one_predicted_frame(rng):
    model = tiny()
    x = rng.standard_normal((4, 4))
    loss, _ = apc_loss(model, x, 3)
    h, _ = nn.lstm_forward(model.lstm, x)
    pred = nn.linear_forward(model.proj, h[:1])
    np.testing.assert_allclose(loss, np.mean((pred - x[3:4]) ** 2))
    with pytest.raises(ValueError, match="too short"):
        apc_loss(model, x[:3], 3)


def test_shift_alignment():
    # features x_t = t * 1; the loss must compare p_t with x_{t+n}
    model = tiny()
    x = np.arange(12, dtype=float)[:, None] * np.ones((1, 4))
    h, _ = nn.lstm_forward(model.lstm, x)
    pred = nn.linear_forward(model.proj, h)
    for n in (1, 3, 5):
        loss, _ = apc_loss(model, x, n)
        np.testing.assert_allclose(loss, np.mean((pred[:12 - n] - x[n:]) ** 2), rtol=1e-12)


def test_apc_gradient_check(rng):
    model = tiny(h=8)
    x = rng.standard_normal((10, 4))
    rep = nn.grad_check(lambda p: apc_loss(ApcModel(p), x, 3), model.params, 1e-3, h=1e-4, num_coords=8)
    assert rep.passed, rep


def test_batched_loss_equals_per_utterance_mean(rng):
    model = tiny()
    seqs = [rng.standard_normal((t, 4)) for t in (5, 9, 7)]
    loss, grads, per = apc_batch_loss(model, seqs, 3)
    singles = [apc_loss(model, s, 3) for s in seqs]
    np.testing.assert_allclose(per, [s[0] for s in singles], rtol=1e-12)
    np.testing.assert_allclose(loss, np.mean(per))
    for k in grads:
        np.testing.assert_allclose(grads[k], np.mean([s[1][k] for s in singles], axis=0), atol=1e-12)


def test_extract_repr_deterministic(rng):
    model = tiny()
    x = rng.standard_normal((6, 4))
    a, b = extract_repr(model, x), extract_repr(model, x)
    assert a.shape == (6, 8)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        extract_repr(model, np.zeros((6, 5)))


def test_pretrain_descends_and_is_deterministic(small_corpus, tmp_path):
    cfg = PretrainConfig(epochs=5, batch_size=2, learning_rate=3e-3, hidden_size=16, seed=3)
    m1, curve = pretrain(cfg, small_corpus, out=tmp_path / "a.ackp", loss_csv=tmp_path / "loss.csv")
    pretrain(cfg, small_corpus, out=tmp_path / "b.ackp")
    assert curve[-1] < curve[0]
    assert (tmp_path / "a.ackp").read_bytes() == (tmp_path / "b.ackp").read_bytes()
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss" and len(lines) == 6
    loaded = ApcModel.load(tmp_path / "a.ackp")
    assert loaded.hidden_size == 16
    _, echo = load_checkpoint(tmp_path / "a.ackp")
    assert echo["train_config"]["seed"] == 3


def test_pretrain_uses_feature_cache(small_corpus, tmp_path):
    featurize_manifest(small_corpus, tmp_path / "feats")
    cached = manifest_features(small_corpus, feature_dir=tmp_path / "feats")
    fresh = manifest_features(small_corpus)
    # AFEA stores float32
    np.testing.assert_allclose(cached[0], fresh[0], rtol=1e-6, atol=1e-5)


def test_pretrain_skips_short_utterances(caplog):
    model = tiny()
    from augssl.apc import _train
    cfg = PretrainConfig(epochs=1, input_size=4, hidden_size=8, batch_size=4)
    with caplog.at_level(logging.WARNING):
        curve, _ = _train(model, [np.zeros((2, 4)), np.ones((8, 4))], cfg)
    assert len(curve) == 1
    assert "skipping utterance 0" in caplog.text
    with pytest.raises(ValueError):
        _train(model, [np.zeros((2, 4))], cfg)


def test_pretrain_empty_manifest():
    from augssl.audio_io import Manifest
    with pytest.raises(ValueError, match="empty"):
        pretrain(PretrainConfig(), Manifest([]))


def test_checkpoint_epochs(small_corpus, tmp_path):
    cfg = PretrainConfig(epochs=2, batch_size=4, hidden_size=8, checkpoint_every=1)
    pretrain(cfg, small_corpus, out=tmp_path / "m.ackp")
    assert (tmp_path / "m.ackp.epoch1").exists() and (tmp_path / "m.ackp.epoch2").exists()


def test_estimator_api(rng):
    from sklearn.base import clone

    X = [rng.standard_normal((12, 4)) for _ in range(3)]
    est = ApcPretrainer(hidden_size=8, epochs=2, batch_size=2, learning_rate=1e-2)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    reps = est.fit_transform(X)
    assert [r.shape for r in reps] == [(12, 8)] * 3
    assert len(est.loss_curve_) == 2
    assert est.score(X) < 0
    for a, b in zip(reps, twin.fit(X).transform(X)):
        np.testing.assert_array_equal(a, b)


# ACKP ---------------------------------------------------------------------


def test_ackp_round_trip_bytes(tmp_path):
    model = tiny()
    model.save(tmp_path / "a.ackp", {"seed": 1})
    params, cfg = load_checkpoint(tmp_path / "a.ackp")
    save_checkpoint(tmp_path / "b.ackp", params, cfg)
    assert (tmp_path / "a.ackp").read_bytes() == (tmp_path / "b.ackp").read_bytes()
    assert params["lstm.0.bias"].shape == (32,)


def test_ackp_float32_storage():
    raw = dumps_checkpoint({"w": np.array([[1 / 3, 2.0]])}, {})
    params, _ = loads_checkpoint(raw)
    assert params["w"][0, 0] == np.float32(1 / 3)


def test_ackp_rejects_bad_input():
    raw = dumps_checkpoint({"w": np.ones((2, 2))}, {"a": 1})
    with pytest.raises(ValueError, match="magic"):
        loads_checkpoint(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        loads_checkpoint(raw[:20])
    with pytest.raises(ValueError):
        dumps_checkpoint({"w": np.ones((2, 2, 2))}, {})


def test_load_wrong_kind(tmp_path):
    save_checkpoint(tmp_path / "x.ackp", {}, {"kind": "probe"})
    with pytest.raises(ValueError, match="not an APC"):
        ApcModel.load(tmp_path / "x.ackp")
