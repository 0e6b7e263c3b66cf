#!/usr/bin/env python3
"""Unlearn the dense model, prune it, and report whether forgotten facts come back."""

import argparse
import sys
from pathlib import Path

from sau.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "bundled.json"))
    ap.add_argument("--sparsity", type=float, default=None)
    ap.add_argument("--out", default=None, help="JSON report path (default: stdout)")
    args = ap.parse_args()
    argv = ["resurface", "--config", args.config]
    if args.sparsity is not None:
        argv += ["--set", f"sparsity={args.sparsity}"]
    if args.out:
        argv += ["--out", args.out]
    sys.exit(main(argv))
