#!/usr/bin/env python3
"""Depth-scaling sweep: train one backbone at several layer counts, multi-seed.

Writes (params, R² mean ± stderr) rows to <out>/scale/scale.csv and a
plot-ready series to <out>/report/scaling_series.csv.  Sizes that diverge on
every seed are recorded as not_converged rather than aborting the sweep.
"""

import argparse
import sys
from pathlib import Path

from ndbench.cli import EXIT_OK, EXIT_TRAINING, main as ndbench


def run(args: list, ok=(EXIT_OK,)) -> int:
    rc = ndbench([str(a) for a in args])
    if rc not in ok:
        sys.exit(f"step failed (exit {rc}): ndbench {' '.join(str(a) for a in args)}")
    return rc


def main_script() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("runs/scaling"))
    p.add_argument("--model", default="mamba", choices=("gru", "transformer", "rwkv", "mamba"))
    p.add_argument("--layers", type=int, nargs="+", default=[1, 2, 4])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--duration-s", type=float, default=60.0)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--embed", type=int, default=None, help="override the preset width")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--window-bins", type=int, default=64)
    args = p.parse_args()

    data = args.out / "data"
    run([
        "synth",
        "--set", f"synth.channels={args.channels}",
        "--set", f"synth.duration_s={args.duration_s}",
        "--out", data,
    ])

    cmd = [
        "scale",
        "--set", f'data.paths=["{data / "day_000"}"]',
        "--set", f'model.kind="{args.model}"',
        "--set", f"scale.layer_counts={list(args.layers)}",
        "--set", f"scale.seeds={list(args.seeds)}",
        "--set", f"train.epochs={args.epochs}",
        "--set", f"train.window_bins={args.window_bins}",
        "--out", args.out / "scale",
    ]
    if args.embed is not None:
        cmd += ["--set", f"model.embed={args.embed}"]
    rc = run(cmd, ok=(EXIT_OK, EXIT_TRAINING))
    if rc == EXIT_TRAINING:
        print("note: some depths never converged; see scale.csv status column")

    run(["report", "--set", f'report.dir="{args.out / "scale"}"', "--out", args.out / "report"])
    print((args.out / "scale" / "scale.csv").read_text())


if __name__ == "__main__":
    main_script()
