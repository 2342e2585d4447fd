#!/usr/bin/env python3
"""Full synthetic benchmark: data synthesis, one decoder per backbone, latency, report.

Composes the ``ndbench`` CLI end to end, writing everything under --out:

  data/                   synthetic session bundles (one per day)
  train_<model>/          checkpoint, metrics.csv, history.json per backbone
  bench/latency.csv       per-model latency rows and long/short window ratios
  report/summary.txt      models-as-columns table per experiment

The default profile is sized for a laptop-class CPU run (tens of minutes).
Use --quick for a seconds-long smoke profile.
"""

import argparse
import sys
from pathlib import Path

from ndbench.cli import EXIT_OK, main as ndbench

MODELS = ("gru", "transformer", "rwkv", "mamba")


def run(args: list) -> None:
    rc = ndbench([str(a) for a in args])
    if rc != EXIT_OK:
        sys.exit(f"step failed (exit {rc}): ndbench {' '.join(str(a) for a in args)}")


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("runs/synthetic"), help="output root")
    p.add_argument("--models", nargs="+", default=list(MODELS), choices=MODELS)
    p.add_argument("--days", type=int, default=3, help="synthetic recording days")
    p.add_argument("--duration-s", type=float, default=120.0, help="seconds per session")
    p.add_argument("--channels", type=int, default=96)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--window-bins", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--multi", action="store_true", help="pool all days instead of training on day 0")
    p.add_argument("--strategy", default="random", help="batch strategy for --multi runs")
    p.add_argument("--quick", action="store_true", help="tiny smoke profile (seconds, not minutes)")
    return p.parse_args()


def main_script() -> None:
    args = parse_args()
    if args.quick:
        args.duration_s = min(args.duration_s, 30.0)
        args.channels = min(args.channels, 16)
        args.epochs = min(args.epochs, 3)
        args.window_bins = min(args.window_bins, 32)

    out = args.out
    data = out / "data"
    run([
        "synth",
        "--set", f"synth.days={args.days}",
        "--set", f"synth.channels={args.channels}",
        "--set", f"synth.duration_s={args.duration_s}",
        "--set", f"synth.seed={args.seed}",
        "--out", data,
    ])

    checkpoints = []
    for model in args.models:
        run_dir = out / f"train_{model}"
        cmd = [
            "train",
            "--set", f'model.kind="{model}"',
            "--set", f"train.epochs={args.epochs}",
            "--set", f"train.window_bins={args.window_bins}",
            "--set", f"train.seed={args.seed}",
            "--out", run_dir,
        ]
        if args.quick:
            small = {"gru": 48, "transformer": 32, "rwkv": 32, "mamba": 48}[model]
            cmd += ["--set", f"model.embed={small}", "--set", "model.layers=1"]
        if args.multi:
            cmd += ["--set", f'data.dir="{data}"', "--set", f'train.strategy="{args.strategy}"']
        else:
            cmd += ["--set", f'data.paths=["{data / "day_000"}"]']
        run(cmd)
        checkpoints.append(str(run_dir / "checkpoint.ckpt"))

    joined = ", ".join(f'"{c}"' for c in checkpoints)
    s_hi = max(2 * args.window_bins, 256 if args.quick else 1024)
    run([
        "bench",
        "--set", f"bench.checkpoints=[{joined}]",
        "--set", f"bench.s_list=[{args.window_bins}, {s_hi}]",
        "--set", f"bench.samples={5 if args.quick else 50}",
        "--set", f"bench.warmup={1 if args.quick else 5}",
        "--out", out / "bench",
    ])
    run(["report", "--set", f'report.dir="{out}"', "--out", out / "report"])
    print((out / "report" / "summary.txt").read_text())


if __name__ == "__main__":
    main_script()
