import csv
import json
import subprocess
import sys


from augssl import __version__
from augssl.cli import dispatch
from augssl.dsp import read_features


def test_no_args_usage(capsys):
    assert dispatch([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert dispatch(["train-everything"]) == 2


def test_version(capsys):
    assert dispatch(["--version"]) == 0
    out = capsys.readouterr().out
    assert __version__ in out and "AFEA v1" in out and "ACKP v1" in out


def test_error_is_single_line(tmp_path, capsys):
    assert dispatch(["featurize", "--manifest", str(tmp_path / "nope.jsonl"), "--out-dir", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: FileNotFoundError:")


def test_gradcheck(capsys):
    assert dispatch(["gradcheck", "--instances", "1", "--log-level", "WARNING"]) == 0
    out = capsys.readouterr().out
    for name in ("linear", "mse", "cross_entropy", "lstm", "apc"):
        assert name in out


def test_pipeline(tmp_path, capsys):
    corpus, noise = tmp_path / "c", tmp_path / "n"
    assert dispatch(["synth-corpus", "--out-dir", str(corpus), "--num-utterances", "4", "--duration", "0.4",
                     "--num-classes", "3", "--seed", "5"]) == 0
    assert json.loads((corpus / "corpus.json").read_text())["seed"] == 5
    assert dispatch(["synth-corpus", "--noise", "--out-dir", str(noise), "--num-utterances", "2"]) == 0
    manifest = corpus / "manifest.jsonl"

    assert dispatch(["featurize", "--manifest", str(manifest), "--out-dir", str(tmp_path / "f")]) == 0
    afea = sorted((tmp_path / "f").glob("*.afea"))
    assert len(afea) == 4 and read_features(afea[0]).dim == 80

    assert dispatch(["augment", "--base", str(manifest), "--strategy", "mix", "--ratio", "1",
                     "--noise-manifest", str(noise / "manifest.jsonl"), "--out-dir", str(tmp_path / "aug"),
                     "--seed", "2"]) == 0
    assert len((tmp_path / "aug" / "manifest.jsonl").read_text().splitlines()) == 8

    cfg = tmp_path / "pre.json"
    cfg.write_text(json.dumps({"hidden_size": 8, "epochs": 2, "batch_size": 2}))
    ckpt = tmp_path / "apc.ackp"
    assert dispatch(["pretrain", "--manifest", str(tmp_path / "aug" / "manifest.jsonl"), "--config", str(cfg),
                     "--out", str(ckpt), "--learning-rate", "0.01", "--seed", "3"]) == 0
    assert ckpt.exists() and (tmp_path / "apc.ackp.loss.csv").exists()

    probe = tmp_path / "probe.ackp"
    assert dispatch(["finetune", "--ckpt", str(ckpt), "--manifest", str(manifest), "--out", str(probe),
                     "--epochs", "2", "--feature-dir", str(tmp_path / "f")]) == 0
    report = tmp_path / "r.csv"
    capsys.readouterr()
    assert dispatch(["evaluate", "--probe", str(probe), "--manifest", str(manifest), "--report", str(report)]) == 0
    assert "frame_accuracy_percent=" in capsys.readouterr().out
    rows = list(csv.DictReader(report.open()))
    assert int(rows[0]["total_frames"]) > 0

    assert dispatch(["finetune", "--ckpt", "identity", "--manifest", str(manifest), "--out",
                     str(tmp_path / "id.ackp"), "--epochs", "1"]) == 0


def test_experiment_and_report(tmp_path):
    assert dispatch(["synth-corpus", "--experiment", "--out-dir", str(tmp_path), "--num-utterances", "2",
                     "--duration", "0.3", "--num-classes", "3"]) == 0
    spec = json.loads((tmp_path / "spec.json").read_text())
    spec.update(strategies=["pitch", "clean_extra"], ratios={"*": [1, 2]})
    spec["pretrain"].update(epochs=1, hidden_size=4)
    spec["finetune"].update(epochs=1)
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    out = tmp_path / "run"
    assert dispatch(["experiment", "--spec", str(tmp_path / "spec.json"), "--out-dir", str(out)]) == 0
    assert len(list((out / "cells").glob("*.json"))) == 5
    assert dispatch(["report", "--dir", str(out), "--kind", "deltas", "--out", str(tmp_path / "d.csv")]) == 0
    assert dispatch(["report", "--dir", str(out), "--kind", "scaling", "--out", str(tmp_path / "s.csv")]) == 0
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 3
    assert "delta_vs_multiplier,clean_extra" in (tmp_path / "s.csv").read_text()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "augssl", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("augssl ")
