#!/usr/bin/env python3
"""Sparsity sweep (baseline vs SAU over sparsities and seeds) with CSV/SVG report."""

import argparse
import sys
from pathlib import Path

from sau.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "bundled.json"))
    ap.add_argument("--out-dir", default="runs/sweep")
    ap.add_argument("--pruner", choices=("magnitude", "activation"), default=None)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    argv = ["sweep", "--config", args.config, "--out-dir", args.out_dir]
    if args.pruner:
        argv += ["--set", f"pruner={args.pruner}"]
    if args.workers:
        argv += ["--set", f"workers={args.workers}"]
    code = main(argv)
    if code == 0:
        print((Path(args.out_dir) / "sweep_summary.csv").read_text())
    sys.exit(code)
