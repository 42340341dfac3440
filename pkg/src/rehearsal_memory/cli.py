"""Command-line interface: gen | train-teacher | train | eval | ablate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ABLATIONS, RunConfig
from .errors import ConfigError, DataError, NumericError

# Datasets above this sample count need an explicit --full.
FULL_GUARD_SAMPLES = 100_000


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to a RunConfig JSON file")
    p.add_argument("--seed", type=int, default=None, help="override training.seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmem",
        description="Rehearsal memory: generate data, train the teacher and "
        "student, evaluate with early/later buckets, run ablations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate the synthetic dataset")
    _add_common(gen)
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument(
        "--full",
        action="store_true",
        help=f"allow generating more than {FULL_GUARD_SAMPLES} samples",
    )

    teacher = sub.add_parser("train-teacher", help="train the history sampler")
    _add_common(teacher)
    teacher.add_argument("--data", required=True, help="dataset directory")
    teacher.add_argument("--out", required=True, help="output directory")

    train = sub.add_parser("train", help="train the student model")
    _add_common(train)
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--selections", default=None, help="teacher selection cache")
    train.add_argument("--ablation", default="full", choices=ABLATIONS)

    ev = sub.add_parser("eval", help="evaluate checkpoints on a split")
    ev.add_argument("--checkpoint", required=True, nargs="+")
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.add_argument("--out", default=None, help="write metrics JSON here")
    ev.add_argument("--plot", default=None, help="write an early/later SVG here")

    ablate = sub.add_parser(
        "ablate", help="run teacher + student arms over several seeds"
    )
    _add_common(ablate)
    ablate.add_argument("--data", required=True)
    ablate.add_argument("--out", required=True)
    ablate.add_argument(
        "--seeds", default="0,1,2", help="comma-separated student seeds"
    )
    ablate.add_argument(
        "--arms",
        default="full,no-rehearsal",
        help=f"comma-separated subset of {','.join(ABLATIONS)}",
    )
    return parser


def cmd_gen(args) -> int:
    from .synthetic import generate_dataset

    run = RunConfig.from_file(args.config)
    if args.seed is not None:
        run.synthetic.seed = args.seed
    total = run.synthetic.n_chains * run.synthetic.samples_per_chain
    if total > FULL_GUARD_SAMPLES and not args.full:
        raise ConfigError(
            f"config would generate {total} samples; pass --full to confirm"
        )
    counts = generate_dataset(run.synthetic, args.out)
    print(f"chains: {run.synthetic.n_chains}")
    for split, count in counts.items():
        print(f"{split}: {count} samples")
    print(f"dataset written to {args.out}")
    return 0


def cmd_train_teacher(args) -> int:
    from .train import run_teacher_stage

    run = RunConfig.from_file(args.config)
    seed = args.seed if args.seed is not None else run.training.seed
    summary = run_teacher_stage(run, args.data, args.out, seed)
    print(
        f"teacher: val_acc={summary['val_acc']:.4f} "
        f"evidence_top1={summary['evidence_top1']:.4f} "
        f"selections={summary['selections']}"
    )
    return 0


def cmd_train(args) -> int:
    from .train import SELECTIONS_FILE, run_student_stage

    run = RunConfig.from_file(args.config)
    seed = args.seed if args.seed is not None else run.training.seed
    selections = args.selections
    if selections is None:
        candidate = Path(args.data) / SELECTIONS_FILE
        selections = str(candidate) if candidate.exists() else None
    summary = run_student_stage(
        run, args.data, args.out, ablation=args.ablation,
        selections_path=selections, seed=seed,
    )
    last = summary["records"][-1]
    print(
        f"student[{args.ablation}] epoch {last['epoch']}: "
        f"val_acc={last['val_acc']:.4f} early={last['val_acc_early']:.4f} "
        f"later={last['val_acc_later']:.4f}"
    )
    print(f"checkpoint: {summary['checkpoint']}")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import evaluate_checkpoint, plot_bucket_accuracy, write_metrics

    records = []
    for ckpt in args.checkpoint:
        metrics = evaluate_checkpoint(ckpt, args.data, args.split)
        records.append(metrics)
        print(
            f"{ckpt} [{args.split}] acc={metrics['acc']:.4f} "
            f"early={metrics['acc_early']:.4f} later={metrics['acc_later']:.4f} "
            f"(n={metrics['n']}, memory={metrics['memory_bytes']}B)"
        )
    if args.out:
        write_metrics(args.out, records[0] if len(records) == 1 else {"checkpoints": records})
        print(f"metrics written to {args.out}")
    if args.plot:
        plot_bucket_accuracy(records, args.plot)
        print(f"plot written to {args.plot}")
    return 0


def cmd_ablate(args) -> int:
    from .evaluate import evaluate_checkpoint
    from .train import SELECTIONS_FILE, run_student_stage, run_teacher_stage

    run = RunConfig.from_file(args.config)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    for arm in arms:
        if arm not in ABLATIONS:
            raise ConfigError(f"unknown ablation arm {arm!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    needs_cache = any(arm not in ("no-rehearsal", "random-sampler") for arm in arms)
    results: dict[str, dict[str, list[float]]] = {
        arm: {"acc": [], "acc_early": [], "acc_later": []} for arm in arms
    }
    for seed in seeds:
        selections = None
        if needs_cache:
            teacher_dir = out / f"seed{seed}" / "teacher"
            summary = run_teacher_stage(run, args.data, teacher_dir, seed)
            print(
                f"[seed {seed}] teacher val_acc={summary['val_acc']:.4f} "
                f"evidence_top1={summary['evidence_top1']:.4f}"
            )
            selections = teacher_dir / SELECTIONS_FILE
        for arm in arms:
            arm_dir = out / f"seed{seed}" / arm
            summary = run_student_stage(
                run, args.data, arm_dir, ablation=arm,
                selections_path=selections, seed=seed,
            )
            metrics = evaluate_checkpoint(summary["checkpoint"], args.data, "test")
            for key in ("acc", "acc_early", "acc_later"):
                results[arm][key].append(metrics[key])
            print(
                f"[seed {seed}] {arm}: test acc={metrics['acc']:.4f} "
                f"early={metrics['acc_early']:.4f} later={metrics['acc_later']:.4f}"
            )

    summary = {
        arm: {key: sum(vals) / len(vals) for key, vals in by_key.items()}
        for arm, by_key in results.items()
    }
    report = {"seeds": seeds, "per_seed": results, "mean": summary}
    if "full" in summary and "no-rehearsal" in summary:
        report["early_gap_full_vs_no_rehearsal"] = (
            summary["full"]["acc_early"] - summary["no-rehearsal"]["acc_early"]
        )
    (out / "ablation_summary.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    for arm, stats in summary.items():
        print(
            f"mean[{arm}]: acc={stats['acc']:.4f} early={stats['acc_early']:.4f} "
            f"later={stats['acc_later']:.4f}"
        )
    if "early_gap_full_vs_no_rehearsal" in report:
        print(f"early gap (full - no-rehearsal): {report['early_gap_full_vs_no_rehearsal']:+.4f}")
    print(f"summary written to {out / 'ablation_summary.json'}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen": cmd_gen,
        "train-teacher": cmd_train_teacher,
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
