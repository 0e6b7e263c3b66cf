#!/usr/bin/env python3
"""Numerical checks of the KL/Fisher results; exit status 7 if any check fails."""

import argparse
import sys

from sau.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    argv = ["verify-theory", "--seed", str(args.seed)]
    if args.out:
        argv += ["--out", args.out]
    sys.exit(main(argv))
