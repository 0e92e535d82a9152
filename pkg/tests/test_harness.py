import json

import numpy as np
import pytest

from augssl.harness import (REFERENCE_BASELINE_ACCURACY, REFERENCE_CLEAN_DELTA_100H, REFERENCE_GRID, REFERENCE_MIX_CROSSOVER,
                            REFERENCE_MIX_DELTA_3X, DisjointnessError, ExperimentSpec, RunReport, cell_seed,
                            check_disjoint, crossover_multiplier, deltas_csv, deltas_table, load_reports,
                            prepare_synthetic_experiment, report_deltas, report_scaling, run_grid, scaling_csv)


def rep(strategy, ratio, acc, seed=0, base=None, hours=None):
    return RunReport(f"{strategy}_r{ratio}_s{seed}", strategy, ratio, seed, 0,
                     hours if hours is not None else 25.0 * (1 + ratio), 1, 1.0, acc, 100, base,
                     None if base is None else acc - base)


# crossover ----------------------------------------------------------------


def test_crossover_interpolation():
    res = crossover_multiplier([(1, 2.0), (3, 6.0)], 4.0)
    assert res.multiplier == 2.0 and res.reached and not res.already_exceeded


def test_crossover_already_exceeded():
    res = crossover_multiplier([(3, 6.0), (1, 2.0)], 1.0)
    assert res.multiplier == 1.0 and res.already_exceeded


def test_crossover_unreachable():
    res = crossover_multiplier([(1, 2.0), (3, 2.5)], 4.0)
    assert not res.reached and res.multiplier is None and res.max_delta == 2.5


def test_crossover_first_crossing_on_non_monotone_series():
    res = crossover_multiplier([(1, 0.0), (2, 5.0), (3, 1.0), (4, 9.0)], 4.0)
    assert res.multiplier == pytest.approx(1.8)


def test_reference_constants():
    # mix reaches 3.3 at 3x and matches the clean-data 5.6 gain near 17x
    assert REFERENCE_BASELINE_ACCURACY + REFERENCE_MIX_DELTA_3X == pytest.approx(54.8)
    res = crossover_multiplier([(3, REFERENCE_MIX_DELTA_3X), (REFERENCE_MIX_CROSSOVER, REFERENCE_CLEAN_DELTA_100H)],
                               REFERENCE_CLEAN_DELTA_100H)
    assert res.multiplier == pytest.approx(17.0)
    assert REFERENCE_GRID["noise_pitch_mix"] == (1, 2, 3, 6, 12, 16, 20)


# deltas / scaling ---------------------------------------------------------


def test_delta_examples():
    rows = report_deltas([rep("baseline", 0, 51.5), rep("noise_pitch_mix", 3, 54.8, base=51.5),
                          rep("pitch", 3, 51.5, base=51.5)])
    by = {r.strategy: r for r in rows}
    assert by["noise_pitch_mix"].delta == pytest.approx(3.3)
    assert by["pitch"].delta == 0.0


def test_deltas_recompute_exactly():
    reports = [rep("baseline", 0, 60.25, seed=s) for s in (0, 1)]
    reports += [rep("noise", 1, a, seed=s, base=60.25) for s, a in ((0, 61.0), (1, 63.5))]
    row = report_deltas(reports)[0]
    assert row.delta == np.mean([61.0 - 60.25, 63.5 - 60.25])
    assert row.num_seeds == 2
    csv_rows = deltas_csv([row]).splitlines()
    assert csv_rows[0] == "strategy,ratio,accuracy_percent,baseline_percent,delta,num_seeds"
    assert float(csv_rows[1].split(",")[4]) == row.delta
    assert "noise" in deltas_table([row])


def test_deltas_need_baseline():
    with pytest.raises(ValueError, match="baseline"):
        report_deltas([rep("noise", 1, 50.0, base=40.0)])


def test_scaling_series():
    reports = [rep("baseline", 0, 50.0, hours=1.0)]
    reports += [rep("noise_pitch_mix", r, 50.0 + r, base=50.0, hours=1.0 + r) for r in (3, 1, 2)]
    reports += [rep("pitch", 1, 52.0, base=50.0, hours=2.0)]
    out = report_scaling(reports)
    xs = [x for x, _ in out.series["noise_pitch_mix"]]
    assert xs == sorted(xs) and xs[0] == 1.0
    assert out.inset["noise_pitch_mix"] == [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]
    assert "pitch" not in out.inset
    assert any("pitch" in w for w in out.warnings)
    text = scaling_csv(out)
    assert text.startswith("kind,strategy,x,y\n")


# spec / cells -------------------------------------------------------------


def test_cells_counting():
    spec = ExperimentSpec("b", "f", "t", strategies=["pitch"], ratios={"pitch": [1]})
    assert spec.cells() == [("baseline", 0, 0), ("pitch", 1, 0)]


def test_spec_aliases_and_defaults():
    spec = ExperimentSpec("b", "f", "t", strategies=["mix", "corpus:foreign"], ratios={"*": [1, 2]}, seeds=[0, 1])
    assert spec.strategies == ["noise_pitch_mix", "corpus_mix:foreign"]
    assert len(spec.cells()) == 2 + 2 * 2 * 2
    with pytest.raises(ValueError):
        ExperimentSpec("b", "f", "t", strategies=["reverb"])
    with pytest.raises(ValueError):
        ExperimentSpec("b", "f", "t", pretrain={"bogus": 1})


def test_cell_seed_stable():
    assert cell_seed(0, "pitch", 1) == cell_seed(0, "pitch", 1)
    assert len({cell_seed(s, st, r) for s in (0, 1) for st in ("pitch", "noise") for r in (1, 2)}) == 8
    assert 0 <= cell_seed(7, "noise", 3) < 2 ** 63


def test_disjointness_guard(small_corpus):
    with pytest.raises(DisjointnessError, match=small_corpus[0].id):
        check_disjoint({"base": small_corpus}, {"test": small_corpus})


def test_run_report_json_round_trip():
    r = rep("noise", 2, 61.0, base=60.0)
    assert RunReport.from_dict(json.loads(json.dumps(r.to_dict()))) == r


# tiny end-to-end ----------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_spec(tmp_path_factory):
    root = tmp_path_factory.mktemp("grid")
    path = prepare_synthetic_experiment(root, num_base=3, duration_s=0.3, num_classes=3, max_ratio=1,
                                        num_heldout=2, strategies=("pitch", "corpus_mix:foreign"),
                                        ratios=(1,))
    doc = json.loads(path.read_text())
    doc["pretrain"].update(epochs=1, hidden_size=4)
    doc["finetune"].update(epochs=1)
    path.write_text(json.dumps(doc))
    return ExperimentSpec.from_json(path)


def test_tiny_grid_and_resume(tiny_spec, tmp_path):
    first = run_grid(tiny_spec, tmp_path / "a", max_new_runs=2)
    assert [r.strategy for r in first] == ["baseline", "pitch"]
    full = run_grid(tiny_spec, tmp_path / "a")
    assert [r.resumed for r in full] == [True, True, False]
    again = run_grid(tiny_spec, tmp_path / "a")
    assert all(r.resumed for r in again)
    fresh = run_grid(tiny_spec, tmp_path / "b")
    assert fresh == full
    assert all(r.status == "ok" for r in fresh)
    assert fresh[1].delta_vs_baseline == fresh[1].frame_accuracy_percent - fresh[0].frame_accuracy_percent
    assert load_reports(tmp_path / "b") == sorted(fresh, key=lambda r: r.run_id)
    header = (tmp_path / "b" / "results.csv").read_text().splitlines()[0]
    assert header.startswith("run_id,pretrain_hours,strategy,ratio,frame_accuracy_percent,total_frames")


def test_failed_cell_recorded(tiny_spec, tmp_path):
    import dataclasses
    broken = dataclasses.replace(tiny_spec, other_manifests={}, strategies=["corpus_mix:foreign"])
    reports = run_grid(broken, tmp_path)
    assert reports[0].status == "ok"
    assert reports[1].status == "failed" and "foreign" in reports[1].error


def test_grid_aborts_on_overlap(tiny_spec, tmp_path):
    import dataclasses
    bad = dataclasses.replace(tiny_spec, test_manifest=tiny_spec.base_manifest)
    with pytest.raises(DisjointnessError):
        run_grid(bad, tmp_path)
    assert not list((tmp_path / "cells").glob("*.json"))


def test_checked_in_grid_config_matches_generator(tmp_path):
    from pathlib import Path
    config = Path(__file__).resolve().parents[1] / "configs" / "grid_synthetic.json"
    checked_in = json.loads(config.read_text())
    generated = json.loads(prepare_synthetic_experiment(tmp_path, num_base=1, duration_s=0.1, num_heldout=1,
                                                        seeds=(0, 1, 2)).read_text())
    for key in ("strategies", "ratios", "seeds", "pretrain", "finetune"):
        assert checked_in[key] == generated[key], key
    spec = ExperimentSpec.from_json(config)
    assert len(spec.cells()) == 3 + 3 * 6 * 3
