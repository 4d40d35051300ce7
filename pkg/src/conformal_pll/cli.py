"""Command-line entry point: ``generate``, ``train`` and ``evaluate``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .conformal import CleanConfig
from .data import (
    DatasetError,
    generate_instance_dependent,
    generate_uniform,
    holdout_test,
    load_dataset,
    save_dataset,
)
from .evaluation import ReportError, compare_all, emit_report, format_table, load_report, wins_ties_losses
from .experiment import METHODS, run_method
from .model import TrainingError
from .pll import fit_supervised

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_seeds(text: str):
    """``"0..4"`` (inclusive range) or a comma-separated list."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if not seeds or len(set(seeds)) != len(seeds):
        raise argparse.ArgumentTypeError("seeds must be nonempty and distinct")
    return seeds


def parse_strategy(text: str):
    if text in ("instance", "instance-dependent"):
        return ("instance", None)
    if text.startswith("uniform:"):
        try:
            q = float(text.split(":", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid flip probability in {text!r}") from None
        if not 0.0 <= q < 1.0:
            raise argparse.ArgumentTypeError("flip probability must lie in [0, 1)")
        return ("uniform", q)
    raise argparse.ArgumentTypeError(f"unknown strategy {text!r}; use uniform:Q or instance")


def parse_alpha(text: str):
    if text == "adaptive":
        return text
    try:
        alpha = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("alpha must be 'adaptive' or a number in (0, 1)") from None
    if not 0.0 < alpha < 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return alpha


def build_parser():
    parser = _Parser(prog="conformal-pll", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="add partial labels to a supervised dataset")
    gen.add_argument("source", help="supervised dataset in the PLL text format")
    gen.add_argument("--strategy", required=True, type=parse_strategy, help="uniform:Q or instance")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--proxy-epochs", type=int, default=50)
    gen.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="train one method over several seeds")
    tr.add_argument("dataset", help="PLL dataset file")
    tr.add_argument("--method", required=True, choices=METHODS)
    tr.add_argument("--seeds", type=parse_seeds, default=parse_seeds("0..4"))
    tr.add_argument("--epochs", type=int, default=200)
    tr.add_argument("--warmup", type=int, default=10)
    tr.add_argument("--val-frac", type=float, default=0.2)
    tr.add_argument("--batch-size", type=int, default=None, help="default: 16 below 5000 instances, else 256")
    tr.add_argument("--lr", type=float, default=1e-3, help="peak learning rate")
    tr.add_argument("--alpha", type=parse_alpha, default="adaptive")
    tr.add_argument("--delta3", type=float, default=0.0)
    tr.add_argument("--test", help="held-out dataset with true labels")
    tr.add_argument("--test-frac", type=float, default=0.2,
                    help="without --test, hold out this seeded fraction of a labelled dataset for testing")
    tr.add_argument("--name", help="dataset name recorded in the reports (default: file stem)")
    tr.add_argument("--out", required=True, help="output directory for the per-seed reports")

    ev = sub.add_parser("evaluate", help="paired t-tests and win/tie/loss tallies")
    ev.add_argument("reports", nargs="+", help="report files or directories")
    ev.add_argument("--out", required=True, help="output JSON document; a .txt table is written alongside")
    return parser


def cmd_generate(args) -> int:
    src = load_dataset(args.source)
    if src.true_labels is None or np.any(src.candidates.sum(axis=1) != 1):
        raise DatasetError(f"{args.source}: source must be supervised (singleton candidates)")
    kind, q = args.strategy
    if kind == "uniform":
        out = generate_uniform(src.features, src.true_labels, q, args.seed, k=src.k)
    else:
        proxy = fit_supervised(src.features, src.true_labels, k=src.k, epochs=args.proxy_epochs, seed=args.seed)
        out = generate_instance_dependent(src.features, src.true_labels, proxy, args.seed)
    save_dataset(out, args.out)
    print(f"mean candidate set size: {out.mean_candidate_size():.6f}")
    return 0


def _train_one(job):
    ds, test, method, cfg, name, test_frac = job
    if test is None and ds.true_labels is not None:
        ds, test = holdout_test(ds, test_frac, cfg.seed)
    _, report = run_method(ds, method, cfg, test=test, dataset_name=name)
    return report


def _workers(n_jobs):
    cap = os.environ.get("PLL_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise UsageError(f"PLL_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(limit, os.cpu_count() or 1, n_jobs))


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    test = load_dataset(args.test) if args.test else None
    if test is not None and test.true_labels is None:
        raise DatasetError(f"{args.test}: test set needs true labels")
    name = args.name or Path(args.dataset).stem
    if not 0.0 < args.test_frac < 1.0:
        raise UsageError("--test-frac must lie in (0, 1)")
    try:
        configs = [
            CleanConfig(epochs=args.epochs, warmup=args.warmup, batch_size=args.batch_size, lr=args.lr,
                        seed=seed, alpha=args.alpha, delta3=args.delta3, val_frac=args.val_frac)
            for seed in args.seeds
        ]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(ds, test, args.method, cfg, name, args.test_frac) for cfg in configs]
    n_workers = _workers(len(jobs))
    if n_workers == 1:
        results = map(_train_one, jobs)
    else:
        pool = ProcessPoolExecutor(n_workers)
        results = pool.map(_train_one, jobs)
    try:
        for cfg, report in zip(configs, _surface_seed(results, configs)):
            path = out_dir / f"{name}__{args.method}__seed{cfg.seed}.json"
            emit_report([report], path)
            acc = "n/a" if report.final_test_acc is None else f"{report.final_test_acc:.6f}"
            print(f"{args.method} seed {cfg.seed}: final test accuracy {acc} -> {path}")
    finally:
        if n_workers > 1:
            pool.shutdown()
    return 0


def _surface_seed(results, configs):
    it = iter(results)
    for cfg in configs:
        try:
            yield next(it)
        except TrainingError as exc:
            raise TrainingError(f"seed {cfg.seed}: {exc}") from exc


def _report_files(paths):
    for p in map(Path, paths):
        if p.is_dir():
            yield from sorted(p.glob("*.json"))
        else:
            yield p


def cmd_evaluate(args) -> int:
    runs = []
    for path in _report_files(args.reports):
        runs.extend(load_report(path)[0])
    comparisons = compare_all(runs)
    tally = wins_ties_losses(comparisons)
    out = Path(args.out)
    emit_report(runs, out, comparisons, tally)
    table = format_table(runs, comparisons)
    out.with_suffix(".txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ReportError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
