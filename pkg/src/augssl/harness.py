"""Experiment grid: for every (strategy, ratio, seed) cell, expand the
pre-training manifest, pre-train, fine-tune a probe on fixed data and
evaluate on fixed test data. Also the delta / scaling reports and the
crossover estimate built from the grid results.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .apc import PretrainConfig, pretrain
from .audio_io import Manifest, load_manifest
from .augment import AugmentationPlan, NoiseAugSpec, PitchAugSpec, expand_plan
from .checkpoint import atomic_write_bytes
from .probe import FinetuneConfig, evaluate, finetune

log = logging.getLogger(__name__)

# Reference values from the full-scale real-speech study. They
# are not reproducible on the synthetic corpus and are kept for reports.
REFERENCE_BASELINE_ACCURACY = 51.5
REFERENCE_CLEAN_DELTA_100H = 5.6
REFERENCE_MIX_DELTA_3X = 3.3
REFERENCE_MIX_CROSSOVER = 17.0
REFERENCE_BASE_HOURS = 25.0
REFERENCE_GRID = {
    "clean_extra": (1, 2, 3),
    "corpus_mix:accented": (1, 2, 3),
    "corpus_mix:foreign": (1, 2, 3),
    "noise": (1, 2, 3),
    "pitch": (1, 2, 3),
    "noise_pitch_mix": (1, 2, 3, 6, 12, 16, 20),
}

GRID_STRATEGIES = ("clean_extra", "corpus_mix", "noise", "pitch", "noise_pitch_mix")
_ALIASES = {"mix": "noise_pitch_mix", "corpus": "corpus_mix"}
BASELINE = "baseline"


class DisjointnessError(ValueError):
    pass


def _canonical(strategy: str) -> str:
    name, _, variant = strategy.partition(":")
    name = _ALIASES.get(name, name)
    if name not in GRID_STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {GRID_STRATEGIES}")
    return f"{name}:{variant}" if variant else name


@dataclass
class ExperimentSpec:
    base_manifest: str
    finetune_manifest: str
    test_manifest: str
    strategies: list = field(default_factory=lambda: ["pitch"])
    ratios: dict = field(default_factory=dict)  # strategy -> list of ratios
    seeds: list = field(default_factory=lambda: [0])
    noise_manifest: Optional[str] = None
    other_manifests: dict = field(default_factory=dict)  # name -> path, for corpus_mix
    extra_clean_manifest: Optional[str] = None
    pretrain: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=dict)
    stack_effects: bool = False
    output_dir: Optional[str] = None

    def __post_init__(self):
        self.strategies = [_canonical(s) for s in self.strategies]
        ratios = {}
        for key, values in (self.ratios or {}).items():
            ratios[_canonical(key) if key != "*" else key] = [int(r) for r in values]
        self.ratios = ratios
        for s in self.strategies:
            rs = self.ratios_for(s)
            if not rs or any(r < 1 for r in rs):
                raise ValueError(f"strategy {s!r} needs a non-empty list of ratios >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        PretrainConfig.from_dict(self.pretrain)
        FinetuneConfig.from_dict(self.finetune)

    def ratios_for(self, strategy: str) -> list:
        if strategy in self.ratios:
            return self.ratios[strategy]
        base = strategy.partition(":")[0]
        return self.ratios.get(base, self.ratios.get("*", [1, 2, 3]))

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "ExperimentSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown experiment spec keys: {sorted(unknown)}")
        doc = dict(doc)
        if base_dir is not None:
            base_dir = Path(base_dir)

            def fix(p):
                return None if p is None else str((base_dir / p).resolve())

            for key in ("base_manifest", "finetune_manifest", "test_manifest", "noise_manifest",
                        "extra_clean_manifest", "output_dir"):
                if key in doc:
                    doc[key] = fix(doc[key])
            doc["other_manifests"] = {k: fix(v) for k, v in doc.get("other_manifests", {}).items()}
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def cells(self) -> list:
        """(strategy, ratio, seed) triples; baselines first."""
        out = [(BASELINE, 0, seed) for seed in self.seeds]
        for seed in self.seeds:
            for s in self.strategies:
                out.extend((s, r, seed) for r in self.ratios_for(s))
        return out


@dataclass
class RunReport:
    run_id: str
    strategy: str
    ratio: int
    seed: int
    cell_seed: int
    pretrain_hours: float
    num_pretrain_utterances: int
    final_pretrain_loss: Optional[float]
    frame_accuracy_percent: Optional[float]
    total_frames: int
    baseline_accuracy_percent: Optional[float]
    delta_vs_baseline: Optional[float]
    status: str = "ok"
    error: Optional[str] = None
    wall_clock_s: float = field(default=0.0, compare=False)
    resumed: bool = field(default=False, compare=False)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("resumed")
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        return cls(**doc)


def cell_seed(grid_seed: int, strategy: str, ratio: int) -> int:
    """Stable 63-bit seed for one grid cell; independent of the other cells."""
    digest = hashlib.sha256(f"{grid_seed}|{strategy}|{ratio}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def run_id(strategy: str, ratio: int, seed: int) -> str:
    return f"{strategy.replace(':', '-')}_r{ratio}_s{seed}"


def check_disjoint(pretrain_sets: dict, heldout_sets: dict) -> None:
    """Abort when any utterance id is shared between pre-training and held-out data."""
    for pname, pman in pretrain_sets.items():
        pids = set(pman.ids)
        for hname, hman in heldout_sets.items():
            shared = pids.intersection(hman.ids)
            if shared:
                sample = sorted(shared)[:5]
                raise DisjointnessError(
                    f"{len(shared)} utterance id(s) shared between {pname} and {hname}: {sample}")


class _Workspace:
    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.base = load_manifest(spec.base_manifest)
        self.finetune = load_manifest(spec.finetune_manifest)
        self.test = load_manifest(spec.test_manifest)
        self.noise = load_manifest(spec.noise_manifest) if spec.noise_manifest else None
        self.others = {k: load_manifest(v) for k, v in spec.other_manifests.items()}
        self.extra = load_manifest(spec.extra_clean_manifest) if spec.extra_clean_manifest else None

    def check(self) -> None:
        pre = {"base": self.base}
        if self.extra is not None:
            pre["extra_clean"] = self.extra
        pre.update({f"other:{k}": v for k, v in self.others.items()})
        check_disjoint(pre, {"finetune": self.finetune, "test": self.test})

    def other_for(self, strategy: str) -> Manifest:
        variant = strategy.partition(":")[2]
        if variant:
            if variant not in self.others:
                raise ValueError(f"no other manifest named {variant!r}")
            return self.others[variant]
        if len(self.others) != 1:
            raise ValueError("corpus_mix without a variant needs exactly one other manifest")
        return next(iter(self.others.values()))

    def pretrain_manifest(self, strategy: str, ratio: int, seed: int, out_dir: Path) -> Manifest:
        if strategy == BASELINE:
            return self.base
        kind = strategy.partition(":")[0]
        kwargs = dict(base=self.base, strategy=kind, ratio=ratio, seed=seed,
                      stack_effects=self.spec.stack_effects)
        if kind in ("noise", "noise_pitch_mix"):
            if self.noise is None:
                raise ValueError(f"strategy {strategy!r} needs noise_manifest")
            kwargs["noise"] = NoiseAugSpec(self.noise, seed=seed)
        if kind in ("pitch", "noise_pitch_mix"):
            kwargs["pitch"] = PitchAugSpec(seed=seed)
        if kind == "corpus_mix":
            kwargs["other"] = self.other_for(strategy)
        if kind == "clean_extra":
            if self.extra is None:
                raise ValueError("strategy 'clean_extra' needs extra_clean_manifest")
            kwargs["other"] = self.extra
        return expand_plan(AugmentationPlan(**kwargs), out_dir)


def _run_cell(spec: ExperimentSpec, strategy: str, ratio: int, seed: int, out_dir: Path,
              baseline_acc: Optional[float]) -> RunReport:
    t0 = time.perf_counter()
    rid = run_id(strategy, ratio, seed)
    cseed = cell_seed(seed, strategy, ratio)
    ws = _Workspace(spec)
    cell_dir = out_dir / "cells" / rid
    hours, n_utt, final_loss, acc, frames = 0.0, 0, None, None, 0
    try:
        manifest = ws.pretrain_manifest(strategy, ratio, cseed, cell_dir / "data")
        hours = manifest.total_duration_s / 3600.0
        n_utt = len(manifest)
        # model init and batch order share the grid seed across cells so
        # that only the pre-training data differs between them
        pcfg = PretrainConfig.from_dict({**spec.pretrain, "seed": seed})
        model, curve = pretrain(pcfg, manifest)
        final_loss = curve[-1] if curve else None
        fcfg = FinetuneConfig.from_dict({**spec.finetune, "seed": seed})
        probe, _ = finetune(model, ws.finetune, fcfg)
        report = evaluate(probe, ws.test, standardize=fcfg.standardize_features)
        acc, frames = report.frame_accuracy_percent, report.total_frames
        status, error = "ok", None
    except Exception as exc:  # recorded; the grid carries on
        log.error("cell %s failed: %s", rid, exc)
        status, error = "failed", "".join(traceback.format_exception_only(type(exc), exc)).strip()
    delta = None
    if acc is not None and baseline_acc is not None:
        delta = acc - baseline_acc
    return RunReport(rid, strategy, ratio, seed, cseed, hours, n_utt, final_loss, acc, frames,
                     baseline_acc, delta, status, error, time.perf_counter() - t0)


def _cell_path(out_dir: Path, rid: str) -> Path:
    return out_dir / "cells" / f"{rid}.json"


def _load_completed(out_dir: Path, rid: str) -> Optional[RunReport]:
    path = _cell_path(out_dir, rid)
    if not path.exists():
        return None
    report = RunReport.from_dict(json.loads(path.read_text()))
    if report.status != "ok":
        return None
    report.resumed = True
    return report


def _persist(out_dir: Path, report: RunReport) -> None:
    data = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(_cell_path(out_dir, report.run_id), data.encode())


def run_grid(spec: ExperimentSpec, out_dir=None, jobs: int = 1, max_new_runs: Optional[int] = None) -> list:
    """Run every cell of ``spec``, baselines first, skipping completed cells.

    Each finished cell is written atomically to ``<out_dir>/cells/<run_id>.json``
    and ``results.csv`` is rebuilt from the completed cells at the end.
    ``max_new_runs`` stops after that many freshly trained cells, which is
    how interruption is exercised in tests.
    """
    out_dir = Path(out_dir or spec.output_dir or "experiment")
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    ws = _Workspace(spec)
    ws.check()
    atomic_write_bytes(out_dir / "spec.json", (json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n").encode())

    reports = {}
    budget = [max_new_runs]

    def spend() -> bool:
        if budget[0] is None:
            return True
        if budget[0] <= 0:
            return False
        budget[0] -= 1
        return True

    baselines = {}
    for strategy, ratio, seed in spec.cells():
        if strategy != BASELINE:
            continue
        rid = run_id(strategy, ratio, seed)
        rep = _load_completed(out_dir, rid)
        if rep is None:
            if not spend():
                break
            rep = _run_cell(spec, strategy, ratio, seed, out_dir, None)
            _persist(out_dir, rep)
        reports[rid] = rep
        baselines[seed] = rep.frame_accuracy_percent

    pending = []
    for strategy, ratio, seed in spec.cells():
        if strategy == BASELINE or seed not in baselines:
            continue
        rid = run_id(strategy, ratio, seed)
        rep = _load_completed(out_dir, rid)
        if rep is not None:
            reports[rid] = rep
        elif spend():
            pending.append((strategy, ratio, seed))

    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, spec, s, r, sd, out_dir, baselines[sd]) for s, r, sd in pending]
            for fut in futures:
                rep = fut.result()
                _persist(out_dir, rep)
                reports[rep.run_id] = rep
    else:
        for s, r, sd in pending:
            rep = _run_cell(spec, s, r, sd, out_dir, baselines[sd])
            _persist(out_dir, rep)
            reports[rep.run_id] = rep

    ordered = [reports[run_id(s, r, sd)] for s, r, sd in spec.cells() if run_id(s, r, sd) in reports]
    write_results_csv(ordered, out_dir / "results.csv")
    return ordered


RESULT_COLUMNS = ["run_id", "pretrain_hours", "strategy", "ratio", "frame_accuracy_percent", "total_frames",
                  "seed", "delta_vs_baseline", "final_pretrain_loss", "status"]


def write_results_csv(reports, path) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        d = rep.to_dict()
        writer.writerow({k: d[k] for k in RESULT_COLUMNS})
    atomic_write_bytes(path, buf.getvalue().encode())


def load_reports(out_dir) -> list:
    cells = sorted((Path(out_dir) / "cells").glob("*.json"))
    return [RunReport.from_dict(json.loads(p.read_text())) for p in cells]


# --------------------------------------------------------------------------
# reports


def _ok(reports):
    return [r for r in reports if r.status == "ok" and r.frame_accuracy_percent is not None]


@dataclass
class DeltaRow:
    strategy: str
    ratio: int
    accuracy_percent: float
    baseline_percent: float
    delta: float
    num_seeds: int


def report_deltas(reports, ratio: Optional[int] = None) -> list:
    """Per-strategy accuracy gain over the baseline at one ratio.

    ``ratio`` defaults to the largest ratio every strategy has in common.
    With several seeds the delta is the seed mean of the per-run deltas.
    """
    reports = _ok(reports)
    if not any(r.strategy == BASELINE for r in reports):
        raise ValueError("report_deltas needs the baseline run")
    by_strategy = {}
    for r in reports:
        if r.strategy != BASELINE:
            by_strategy.setdefault(r.strategy, {}).setdefault(r.ratio, []).append(r)
    if ratio is None:
        common = None
        for ratios in by_strategy.values():
            common = set(ratios) if common is None else common & set(ratios)
        if not common:
            raise ValueError("strategies share no ratio; pass one explicitly")
        ratio = max(common)
    rows = []
    for strategy, ratios in by_strategy.items():
        runs = ratios.get(ratio)
        if not runs:
            continue
        rows.append(DeltaRow(
            strategy, ratio,
            float(np.mean([r.frame_accuracy_percent for r in runs])),
            float(np.mean([r.baseline_accuracy_percent for r in runs])),
            float(np.mean([r.delta_vs_baseline for r in runs])),
            len(runs)))
    return rows


def deltas_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "ratio", "accuracy_percent", "baseline_percent", "delta", "num_seeds"])
    for row in rows:
        writer.writerow([row.strategy, row.ratio, repr(row.accuracy_percent), repr(row.baseline_percent),
                         repr(row.delta), row.num_seeds])
    return buf.getvalue()


def deltas_table(rows) -> str:
    header = f"{'strategy':<24}{'ratio':>6}{'acc %':>10}{'base %':>10}{'delta':>9}{'seeds':>7}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(f"{row.strategy:<24}{row.ratio:>6}{row.accuracy_percent:>10.2f}"
                     f"{row.baseline_percent:>10.2f}{row.delta:>+9.2f}{row.num_seeds:>7}")
    return "\n".join(lines)


@dataclass
class ScalingReport:
    # strategy -> [(total pre-training hours, mean accuracy)] sorted by hours
    series: dict
    # strategy -> [(ratio multiplier, mean delta accuracy)]
    inset: dict
    warnings: list = field(default_factory=list)


def report_scaling(reports, inset_strategies=("noise_pitch_mix", "clean_extra")) -> ScalingReport:
    """Accuracy-vs-hours series per strategy plus delta-vs-multiplier series.

    Every series starts at the baseline point (ratio 0).
    """
    reports = _ok(reports)
    base = [r for r in reports if r.strategy == BASELINE]
    points = {}
    for r in reports:
        if r.strategy != BASELINE:
            points.setdefault(r.strategy, {}).setdefault(r.ratio, []).append(r)
    warnings = []
    series, inset = {}, {}
    for strategy, by_ratio in points.items():
        if len(by_ratio) < 2:
            msg = f"strategy {strategy!r} has {len(by_ratio)} ratio(s); scaling series is partial"
            log.warning(msg)
            warnings.append(msg)
        pts = []
        if base:
            pts.append((float(np.mean([b.pretrain_hours for b in base])),
                        float(np.mean([b.frame_accuracy_percent for b in base]))))
        for ratio, runs in by_ratio.items():
            pts.append((float(np.mean([r.pretrain_hours for r in runs])),
                        float(np.mean([r.frame_accuracy_percent for r in runs]))))
        series[strategy] = sorted(pts)
        if strategy.partition(":")[0] in inset_strategies:
            inset[strategy] = sorted((float(ratio), float(np.mean([r.delta_vs_baseline for r in runs])))
                                     for ratio, runs in by_ratio.items())
    if not series:
        warnings.append("no augmented runs; scaling report is empty")
    return ScalingReport(series, inset, warnings)


def scaling_csv(report: ScalingReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kind", "strategy", "x", "y"])
    for strategy, pts in report.series.items():
        for x, y in pts:
            writer.writerow(["accuracy_vs_hours", strategy, repr(x), repr(y)])
    for strategy, pts in report.inset.items():
        for x, y in pts:
            writer.writerow(["delta_vs_multiplier", strategy, repr(x), repr(y)])
    return buf.getvalue()


@dataclass
class CrossoverResult:
    multiplier: Optional[float]
    reached: bool
    already_exceeded: bool = False
    max_delta: Optional[float] = None
    method: str = "linear interpolation between bracketing points"


def crossover_multiplier(series, target_delta: float) -> CrossoverResult:
    """Smallest multiplier at which a (multiplier, delta) series reaches ``target_delta``.

    Points are sorted by multiplier; the crossing is linearly interpolated
    between the first bracketing pair.
    """
    pts = sorted((float(x), float(y)) for x, y in series)
    if not pts:
        raise ValueError("empty series")
    max_delta = max(y for _, y in pts)
    if pts[0][1] >= target_delta:
        return CrossoverResult(pts[0][0], True, True, max_delta)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if y1 >= target_delta:
            return CrossoverResult(x0 + (target_delta - y0) * (x1 - x0) / (y1 - y0), True, False, max_delta)
    return CrossoverResult(None, False, False, max_delta)


# --------------------------------------------------------------------------
# desk-scale synthetic workspace

DESK_PRETRAIN = {"hidden_size": 32, "epochs": 10, "batch_size": 8, "learning_rate": 3e-3,
                 "standardize_features": True}
DESK_FINETUNE = {"epochs": 20, "batch_size": 4, "learning_rate": 1e-2, "standardize_features": True}


def prepare_synthetic_experiment(out_dir, num_base: int = 12, duration_s: float = 1.0, num_classes: int = 8,
                                 max_ratio: int = 3, num_heldout: int = 12, seed: int = 0,
                                 strategies=("clean_extra", "corpus_mix:accented", "corpus_mix:foreign",
                                             "noise", "pitch", "noise_pitch_mix"),
                                 ratios=(1, 2, 3), seeds=(0,)) -> Path:
    """Generate every corpus the strategy x ratio grid needs and write ``spec.json``.

    The "accented" corpus reuses the phoneme inventory with every frequency
    scaled by 1.06; the "foreign" corpus draws a different inventory.
    Returns the spec path.
    """
    from .audio_io import SynthCorpusSpec, generate_noise_corpus, generate_synth_corpus

    out_dir = Path(out_dir)
    corpora = {
        "base": SynthCorpusSpec(num_base, duration_s, num_classes, seed=seed * 1000 + 1, id_prefix="base"),
        "extra": SynthCorpusSpec(num_base * max_ratio, duration_s, num_classes, seed=seed * 1000 + 2,
                                 id_prefix="extra"),
        "accented": SynthCorpusSpec(num_base * max_ratio, duration_s, num_classes, seed=seed * 1000 + 3,
                                    formant_scale=1.06, id_prefix="acc"),
        "foreign": SynthCorpusSpec(num_base * max_ratio, duration_s, num_classes, seed=seed * 1000 + 4,
                                   inventory_seed=1, id_prefix="for"),
        "finetune": SynthCorpusSpec(num_heldout, duration_s, num_classes, seed=seed * 1000 + 5, id_prefix="ft"),
        "test": SynthCorpusSpec(num_heldout, duration_s, num_classes, seed=seed * 1000 + 6, id_prefix="test"),
    }
    for name, cspec in corpora.items():
        generate_synth_corpus(cspec, out_dir / "corpora" / name)
    generate_noise_corpus(out_dir / "corpora" / "noise", seed=seed * 1000 + 7)
    doc = {
        "base_manifest": "corpora/base/manifest.jsonl",
        "finetune_manifest": "corpora/finetune/manifest.jsonl",
        "test_manifest": "corpora/test/manifest.jsonl",
        "noise_manifest": "corpora/noise/manifest.jsonl",
        "extra_clean_manifest": "corpora/extra/manifest.jsonl",
        "other_manifests": {"accented": "corpora/accented/manifest.jsonl",
                            "foreign": "corpora/foreign/manifest.jsonl"},
        "strategies": list(strategies),
        "ratios": {"*": list(ratios)},
        "seeds": list(seeds),
        "pretrain": dict(DESK_PRETRAIN),
        "finetune": dict(DESK_FINETUNE),
    }
    path = out_dir / "spec.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path
