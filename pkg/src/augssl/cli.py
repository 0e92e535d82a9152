"""``augssl`` command-line entry point.

Logging goes to stderr, data to files/stdout. Failures print a single
``error: <Type>: <message>`` line and exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import ACKP_VERSION
from .dsp import AFEA_VERSION

log = logging.getLogger("augssl")

SUBCOMMANDS = ("synth-corpus", "featurize", "augment", "pretrain", "finetune", "evaluate",
               "experiment", "report", "gradcheck")


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def _write_meta(path, **fields) -> None:
    Path(path).write_text(json.dumps(fields, indent=2, sort_keys=True) + "\n")


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


# --------------------------------------------------------------------------
# subcommands


def cmd_synth_corpus(args) -> int:
    from .audio_io import SynthCorpusSpec, generate_noise_corpus, generate_synth_corpus
    from .harness import prepare_synthetic_experiment

    seed = 0 if args.seed is None else args.seed
    if args.experiment:
        path = prepare_synthetic_experiment(args.out_dir, num_base=args.num_utterances,
                                            duration_s=args.duration, num_classes=args.num_classes,
                                            seed=seed)
        print(path)
        return 0
    if args.noise:
        manifest = generate_noise_corpus(args.out_dir, args.num_utterances, args.duration,
                                         args.sample_rate, seed, args.id_prefix or "noise")
    else:
        spec = SynthCorpusSpec(args.num_utterances, args.duration, args.num_classes, args.sample_rate,
                               seed, args.inventory_seed, args.formant_scale, args.id_prefix or "utt")
        manifest = generate_synth_corpus(spec, args.out_dir)
    _write_meta(Path(args.out_dir) / "corpus.json", seed=seed, entries=len(manifest),
                args={k: v for k, v in vars(args).items() if k != "func"})
    print(Path(args.out_dir) / "manifest.jsonl")
    return 0


def cmd_featurize(args) -> int:
    from .audio_io import load_manifest
    from .features import featurize_manifest

    paths = featurize_manifest(load_manifest(args.manifest), args.out_dir)
    _write_meta(Path(args.out_dir) / "featurize.json", seed=args.seed, manifest=str(args.manifest),
                files=len(paths), afea_version=AFEA_VERSION)
    return 0


def cmd_augment(args) -> int:
    from .audio_io import load_manifest
    from .augment import AugmentationPlan, NoiseAugSpec, PitchAugSpec, expand_plan

    seed = 0 if args.seed is None else args.seed
    base = load_manifest(args.base)
    noise = NoiseAugSpec(load_manifest(args.noise_manifest), seed=seed) if args.noise_manifest else None
    other = load_manifest(args.other_manifest) if args.other_manifest else None
    plan = AugmentationPlan(base, args.strategy, args.ratio, seed, noise=noise, pitch=PitchAugSpec(seed=seed),
                            other=other, stack_effects=args.stack_effects)
    manifest = expand_plan(plan, args.out_dir, jobs=args.jobs)
    _write_meta(Path(args.out_dir) / "augment.json", seed=seed, strategy=plan.strategy, ratio=plan.ratio,
                base=str(args.base), entries=len(manifest), stack_effects=args.stack_effects)
    print(Path(args.out_dir) / "manifest.jsonl")
    return 0


def cmd_pretrain(args) -> int:
    from .apc import PretrainConfig, pretrain
    from .audio_io import load_manifest

    doc = _load_json(args.config)
    doc.update(_overrides(args, ("seed", "epochs", "batch_size", "learning_rate", "hidden_size")))
    config = PretrainConfig.from_dict(doc)
    loss_csv = args.loss_csv or f"{args.out}.loss.csv"
    pretrain(config, load_manifest(args.manifest), out=args.out, loss_csv=loss_csv, feature_dir=args.feature_dir)
    return 0


def cmd_finetune(args) -> int:
    from .apc import write_loss_curve
    from .audio_io import load_manifest
    from .probe import FinetuneConfig, finetune

    doc = _load_json(args.config)
    doc.update(_overrides(args, ("seed", "epochs", "batch_size", "learning_rate")))
    if args.unfreeze:
        doc["backbone_frozen"] = False
    config = FinetuneConfig.from_dict(doc)
    ckpt = None if args.ckpt == "identity" else args.ckpt
    probe, curve = finetune(ckpt, load_manifest(args.manifest), config, feature_dir=args.feature_dir)
    probe.save(args.out, config.to_dict())
    write_loss_curve(curve, f"{args.out}.loss.csv")
    return 0


def cmd_evaluate(args) -> int:
    from .audio_io import load_manifest
    from .checkpoint import load_checkpoint
    from .probe import ProbeModel, evaluate, write_report_csv

    probe = ProbeModel.load(args.probe)
    _, echo = load_checkpoint(args.probe)
    standardize = args.standardize or bool(echo.get("train_config", {}).get("standardize_features"))
    report = evaluate(probe, load_manifest(args.manifest), feature_dir=args.feature_dir,
                      standardize=standardize)
    row = {"run_id": args.run_id, "pretrain_hours": args.pretrain_hours, "strategy": args.strategy,
           "ratio": args.ratio, "frame_accuracy_percent": report.frame_accuracy_percent,
           "total_frames": report.total_frames}
    write_report_csv([row], args.report)
    _write_meta(f"{args.report}.json", seed=args.seed, **report.to_dict())
    print(f"frame_accuracy_percent={report.frame_accuracy_percent:.4f} total_frames={report.total_frames}")
    return 0


def cmd_experiment(args) -> int:
    from .harness import ExperimentSpec, run_grid

    spec = ExperimentSpec.from_json(args.spec)
    if args.seed is not None:
        spec.seeds = [args.seed]
    reports = run_grid(spec, args.out_dir, jobs=args.jobs)
    failed = [r.run_id for r in reports if r.status != "ok"]
    print(f"{len(reports)} runs, {len(failed)} failed")
    return 1 if failed else 0


def cmd_report(args) -> int:
    from .harness import deltas_csv, deltas_table, load_reports, report_deltas, report_scaling, scaling_csv

    reports = load_reports(args.dir)
    if args.kind == "deltas":
        rows = report_deltas(reports, args.ratio)
        text = deltas_csv(rows)
        print(deltas_table(rows))
    else:
        rep = report_scaling(reports)
        for w in rep.warnings:
            log.warning(w)
        text = scaling_csv(rep)
    Path(args.out).write_text(text)
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import gradient_suite

    seed = 0 if args.seed is None else args.seed
    results = gradient_suite(instances=args.instances, seed=seed)
    ok = True
    for r in results:
        status = "ok" if r.passed else "FAIL"
        ok &= r.passed
        print(f"{r.name:<14} max_rel_error={r.max_rel_error:.3e} tol={r.tolerance:.0e} {status}")
    return 0 if ok else 1


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (u64)")
    common.add_argument("--log-level", default="INFO")
    common.add_argument("--jobs", type=int, default=1, help="worker parallelism")

    parser = argparse.ArgumentParser(prog="augssl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"augssl {__version__} (AFEA v{AFEA_VERSION}, ACKP v{ACKP_VERSION})")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("synth-corpus", parents=[common], help="generate a synthetic labelled corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-utterances", type=int, default=50)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--inventory-seed", type=int, default=0)
    p.add_argument("--formant-scale", type=float, default=1.0)
    p.add_argument("--id-prefix", default=None)
    p.add_argument("--noise", action="store_true", help="write a background-noise bank instead")
    p.add_argument("--experiment", action="store_true",
                   help="write every corpus of the full strategy x ratio grid plus spec.json")
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("featurize", parents=[common], help="write AFEA log-mel files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("augment", parents=[common], help="expand a manifest with augmented copies")
    p.add_argument("--base", required=True)
    p.add_argument("--strategy", required=True, choices=["noise", "pitch", "mix", "corpus"])
    p.add_argument("--ratio", type=int, default=1)
    p.add_argument("--noise-manifest")
    p.add_argument("--other-manifest")
    p.add_argument("--stack-effects", action="store_true",
                   help="for mix: apply both pitch and noise to every copy")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("pretrain", parents=[common], help="APC pre-training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--feature-dir")
    p.add_argument("--loss-csv")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--hidden-size", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="train a phoneme probe")
    p.add_argument("--ckpt", required=True, help="APC checkpoint, or 'identity'")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--feature-dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--unfreeze", action="store_true")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common], help="frame accuracy of a probe")
    p.add_argument("--probe", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--feature-dir")
    p.add_argument("--standardize", action="store_true",
                   help="force per-utterance standardization (default: as recorded in the probe)")
    p.add_argument("--run-id", default="eval")
    p.add_argument("--strategy", default="")
    p.add_argument("--ratio", type=int, default=0)
    p.add_argument("--pretrain-hours", type=float, default=0.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", parents=[common], help="run the augmentation grid")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", parents=[common], help="delta or scaling tables from a grid")
    p.add_argument("--dir", required=True)
    p.add_argument("--kind", required=True, choices=["deltas", "scaling"])
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=int)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        stream=sys.stderr, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
