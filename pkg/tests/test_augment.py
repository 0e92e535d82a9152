import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from augssl.audio_io import AudioBuffer, Manifest, SynthCorpusSpec, generate_synth_corpus
from augssl.augment import (SNR_CHOICES_DB, AugmentationPlan, NoiseAugSpec, PitchAugSpec, expand_plan, mix_noise,
                            pitch_shift, snr_db, tile_noise, time_stretch)

from conftest import sine
from oracles import peak_frequency


def test_zero_db_equal_rms(rng):
    clean = AudioBuffer(rng.standard_normal(16000))
    clean = AudioBuffer(0.1 * clean.samples / np.sqrt(np.mean(clean.samples ** 2)))
    noise = AudioBuffer(rng.uniform(-1, 1, 16000))
    out = mix_noise(clean, noise, 0.0)
    resid = out.samples - clean.samples
    assert abs(np.sqrt(np.mean(resid ** 2)) - 0.1) < 1e-6


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(SNR_CHOICES_DB), st.integers(200, 3000), st.integers(50, 4000))
def test_snr_exact_before_clipping(seed, target, n_clean, n_noise):
    rng = np.random.default_rng(seed)
    clean = AudioBuffer(0.1 * rng.standard_normal(n_clean))
    noise = AudioBuffer(0.2 * rng.standard_normal(n_noise))
    offset = int(rng.integers(n_noise))
    out = mix_noise(clean, noise, target, offset)
    if np.any(np.abs(out.samples) >= 1.0):
        return
    assert abs(snr_db(clean.samples, out.samples - clean.samples) - target) < 0.01


def test_noise_tiles_with_offset():
    assert tile_noise(np.array([1.0, 2.0, 3.0]), 7, offset=2).tolist() == [3, 1, 2, 3, 1, 2, 3]


def test_mix_clips():
    out = mix_noise(AudioBuffer(np.full(100, 0.99)), AudioBuffer(np.ones(10)), -20.0)
    assert np.max(out.samples) <= 1.0


def test_mix_errors():
    with pytest.raises(ValueError, match="silent"):
        mix_noise(AudioBuffer(np.zeros(10)), AudioBuffer(np.ones(10)), 5.0)
    with pytest.raises(ValueError, match="sample-rate"):
        mix_noise(AudioBuffer(np.ones(10), 16000), AudioBuffer(np.ones(10), 8000), 5.0)
    with pytest.raises(ValueError):
        mix_noise(AudioBuffer(np.ones(10)), AudioBuffer(np.ones(10)), np.inf)


@pytest.mark.parametrize("freq, semis, expected", [(440.0, 2, 493.88), (300.0, 12, 600.0), (1000.0, -3, 840.90)])
def test_pitch_shift_peaks(freq, semis, expected):
    out = pitch_shift(sine(freq), semis)
    assert len(out) == 16000
    assert abs(peak_frequency(out.samples, 16000) / expected - 1) < 0.01


def test_zero_shift_is_identity_like():
    x = sine(523.0)
    y = pitch_shift(x, 0.0)
    corr = np.dot(x.samples, y.samples) / (np.linalg.norm(x.samples) * np.linalg.norm(y.samples))
    assert corr >= 0.99


def test_time_stretch_length():
    x = sine(440.0).samples
    assert len(time_stretch(x, 1.25)) == 20000
    assert len(time_stretch(x, 0.8)) == 12800


def test_pitch_shift_errors():
    with pytest.raises(ValueError, match="outside"):
        pitch_shift(sine(440.0), 13)
    with pytest.raises(ValueError, match="shorter"):
        pitch_shift(AudioBuffer(np.zeros(4095)), 1)


def test_pitch_draw_avoids_dead_zone(rng):
    spec = PitchAugSpec()
    draws = np.array([spec.draw(rng) for _ in range(500)])
    assert np.all(np.abs(draws) >= 0.25) and np.all(np.abs(draws) <= 2.0)
    assert (draws > 0).any() and (draws < 0).any()
    with pytest.raises(ValueError):
        PitchAugSpec((-0.1, 0.1))


# plan expansion -----------------------------------------------------------


@pytest.fixture(scope="module")
def base10(tmp_path_factory):
    return generate_synth_corpus(SynthCorpusSpec(10, 0.3, 3, seed=4), tmp_path_factory.mktemp("base10"))


def _pitch_only(base, seed=0):
    # shifting needs >= 4096 samples, so pitch tests use 0.3 s clips (4800)
    return AugmentationPlan(base, "pitch", 3, seed)


def test_pitch_plan_counts(base10, tmp_path):
    m = expand_plan(_pitch_only(base10), tmp_path)
    assert len(m) == 40
    tags = [e.source_tag for e in m]
    assert tags.count("clean") == 10 and tags.count("pitch_aug") == 30
    assert len(set(m.ids)) == 40
    np.testing.assert_allclose(m.total_duration_s, 4 * base10.total_duration_s, rtol=0.01)
    assert (tmp_path / "manifest.jsonl").exists()


def test_noise_plan_snr(base10, noise_bank, tmp_path):
    plan = AugmentationPlan(base10, "noise", 1, 3, noise=NoiseAugSpec(noise_bank))
    m = expand_plan(plan, tmp_path)
    assert len(m) == 20
    for e in m:
        if e.source_tag != "noise_aug":
            continue
        assert e.meta["snr_db"] in SNR_CHOICES_DB
        origin = next(b for b in base10 if b.id == e.meta["origin"])
        clean = origin.load_audio().samples
        resid = e.load_audio().samples - clean
        # 16-bit storage adds quantization noise far below the 0.01 dB budget
        assert abs(snr_db(clean, resid) - e.meta["snr_db"]) < 0.01


def test_plan_determinism(base10, noise_bank, tmp_path):
    outs = []
    for name, jobs in (("a", 1), ("b", 3)):
        plan = AugmentationPlan(base10, "mix", 2, 9, noise=NoiseAugSpec(noise_bank))
        outs.append((expand_plan(plan, tmp_path / name, jobs=jobs), tmp_path / name))
    (ma, da), (mb, db) = outs
    assert ma.ids == mb.ids
    for ea, eb in zip(ma, mb):
        assert ea.meta == eb.meta
        assert ea.audio_path.read_bytes() == eb.audio_path.read_bytes()


def test_mix_plan_uses_both_effects(base10, noise_bank, tmp_path):
    m = expand_plan(AugmentationPlan(base10, "noise_pitch_mix", 3, 1, noise=NoiseAugSpec(noise_bank)), tmp_path)
    tags = [e.source_tag for e in m if e.source_tag != "clean"]
    assert tags.count("pitch_aug") > 0 and tags.count("noise_aug") > 0


def test_stacked_mix(base10, noise_bank, tmp_path):
    plan = AugmentationPlan(base10, "mix", 1, 1, noise=NoiseAugSpec(noise_bank), stack_effects=True)
    for e in expand_plan(plan, tmp_path):
        if e.source_tag != "clean":
            assert "semitones" in e.meta and "snr_db" in e.meta


def test_corpus_mix_takes_hours(base10, tmp_path):
    other = generate_synth_corpus(SynthCorpusSpec(25, 0.3, 3, seed=5, id_prefix="oth"), tmp_path / "o")
    m = expand_plan(AugmentationPlan(base10, "corpus", 2, 0, other=other))
    added = [e for e in m if e.source_tag == "mixed_corpus"]
    assert [e.meta["origin"] for e in added] == other.ids[:20]
    np.testing.assert_allclose(m.total_duration_s, 3 * base10.total_duration_s, rtol=0.01)
    with pytest.raises(ValueError, match="needs"):
        expand_plan(AugmentationPlan(base10, "corpus_mix", 3, 0, other=other))


def test_plan_errors(base10):
    with pytest.raises(ValueError, match="noise"):
        AugmentationPlan(base10, "noise", 1)
    with pytest.raises(ValueError, match="unknown"):
        AugmentationPlan(base10, "reverb", 1)
    with pytest.raises(ValueError, match="ratio"):
        AugmentationPlan(base10, "pitch", 0)
    with pytest.raises(ValueError, match="empty"):
        expand_plan(AugmentationPlan(Manifest([]), "pitch", 1), "unused")
