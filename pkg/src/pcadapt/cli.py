"""Command-line entry point: ``pcadapt {pretrain,run,summarize,verify,timing}``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .errors import PCAdaptError
from .harness import (ExperimentConfig, pretrain, read_records_dir, run_experiment, timing_report,
                      write_summary, write_timing_csv)
from .nn import ARCHITECTURES
from .plotting import plot_timing
from .verify import SUITES, run_suite


def _progress(rec):
    print(f"{rec.run_id} epoch {rec.epoch:3d}  t={rec.train_wall_time_s:8.2f}s  "
          f"metric={rec.train_metric:.4f}  acc={rec.test_accuracy:.4f}", flush=True)


def cmd_pretrain(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    _, meta = pretrain(cfg, args.out, progress=None if args.quiet else _progress)
    print(f"saved {args.out}: clean test accuracy {meta['clean_test_accuracy']:.4f}")
    return 0


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    result = run_experiment(cfg, out_dir=args.out_dir, progress=None if args.quiet else _progress)
    failed = [r.run_id for r in result.runs if r.status == "failed"]
    print(f"wrote {len(result.runs)} runs to {args.out_dir}" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return 0


def cmd_summarize(args) -> int:
    records = read_records_dir(args.input)
    out = Path(args.out_dir or args.input)
    summary = write_summary(records, out, args.budget_seconds)
    for p in summary.peaks:
        peak = "absent" if p.status == "absent" else f"{p.peak_mean:.4f} +/- {p.peak_std:.4f} (n={p.n_runs})"
        print(f"{p.regime:10s} {p.arch:5s} {p.shift:8s} peak within {p.budget_s:g}s: {peak}")
    print(f"wrote {out / 'summary.csv'}, {out / 'peaks.csv'}, {out / 'accuracy_vs_time.png'}")
    return 0


def cmd_verify(args) -> int:
    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_timing(args) -> int:
    rows = timing_report(args.arch, n_batches=args.batches, batch_size=args.batch_size, dtype=args.dtype,
                         repeats=args.repeats)
    for r in rows:
        print(f"{r.arch:5s} T={r.inference_steps:2d}  bp={r.bp_epoch_s:.3f}s  pc={r.pc_epoch_s:.3f}s  "
              f"ratio={r.ratio:.2f}  (reference {r.reference_ratio:.2f})")
    if args.out_dir:
        out = Path(args.out_dir)
        write_timing_csv(rows, out / "timing.csv")
        plot_timing(rows, out / "timing.png")
        print(f"wrote {out / 'timing.csv'}, {out / 'timing.png'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcadapt", description="BP pretraining and PC/BP adaptation experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("pretrain", help="BP-train on clean data and save a checkpoint")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("-q", "--quiet", action="store_true")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("run", help="run every seed of an experiment config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("-q", "--quiet", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("summarize", help="aggregate run CSVs and plot accuracy vs time")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--budget-seconds", type=float, default=math.inf)
    sp.add_argument("--out-dir", default=None, help="defaults to the input directory")
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("verify", help="run the gradient and property oracles")
    sp.add_argument("--suite", default="all", choices=sorted(SUITES) + ["all"])
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("timing", help="PC/BP per-epoch time ratio per architecture")
    sp.add_argument("--arch", nargs="+", default=list(ARCHITECTURES), choices=ARCHITECTURES)
    sp.add_argument("--batches", type=int, default=3)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--repeats", type=int, default=1)
    sp.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    sp.add_argument("--out-dir", default=None)
    sp.set_defaults(func=cmd_timing)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except PCAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
