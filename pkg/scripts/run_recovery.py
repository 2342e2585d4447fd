#!/usr/bin/env python3
"""Cross-day recovery: pooled base training, then incremental fine-tuning on a held-out day.

Simulates nonstationary drift by decaying firing rates and permuting channel
tuning day over day, trains a base decoder on all but the final day, and
fine-tunes on growing slices of the final day's calibration data.  Writes the
zero-shot score, the recovery curve (<out>/finetune/curve.csv), and the time
to cross the recovery threshold.
"""

import argparse
import sys
from pathlib import Path

from ndbench.cli import EXIT_OK, main as ndbench


def run(args: list) -> None:
    rc = ndbench([str(a) for a in args])
    if rc != EXIT_OK:
        sys.exit(f"step failed (exit {rc}): ndbench {' '.join(str(a) for a in args)}")


def main_script() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("runs/recovery"))
    p.add_argument("--model", default="gru", choices=("gru", "transformer", "rwkv", "mamba"))
    p.add_argument("--days", type=int, default=5)
    p.add_argument("--duration-s", type=float, default=90.0)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--decay", type=float, default=0.7, help="per-day firing-rate retention")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--finetune-epochs", type=int, default=5)
    p.add_argument("--increment-s", type=float, default=10.0)
    p.add_argument("--window-bins", type=int, default=64)
    args = p.parse_args()
    if args.days < 2:
        sys.exit("needs at least 2 days: one to hold out, the rest for the base decoder")

    data = args.out / "data"
    run([
        "synth",
        "--set", f"synth.days={args.days}",
        "--set", f"synth.channels={args.channels}",
        "--set", f"synth.duration_s={args.duration_s}",
        "--set", f"synth.rate_decay_per_day={args.decay}",
        "--set", "synth.permutation_seed=1",
        "--out", data,
    ])

    base_days = ", ".join(f'"{data / f"day_{d:03d}"}"' for d in range(args.days - 1))
    run([
        "train",
        "--set", f"data.paths=[{base_days}]",
        "--set", f'model.kind="{args.model}"',
        "--set", f"train.epochs={args.epochs}",
        "--set", f"train.window_bins={args.window_bins}",
        "--out", args.out / "base",
    ])

    run([
        "finetune",
        "--set", f'finetune.base="{args.out / "base" / "checkpoint.ckpt"}"',
        "--set", f'data.paths=["{data / f"day_{args.days - 1:03d}"}"]',
        "--set", f"train.finetune_epochs={args.finetune_epochs}",
        "--set", f"train.increment_s={args.increment_s}",
        "--set", f"train.window_bins={args.window_bins}",
        "--out", args.out / "finetune",
    ])
    print((args.out / "finetune" / "curve.csv").read_text())


if __name__ == "__main__":
    main_script()
