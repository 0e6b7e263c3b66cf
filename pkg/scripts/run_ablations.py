#!/usr/bin/env python3
"""Top-k ratio and redistribution ablations of SAU at the configured sparsity."""

import argparse
import sys
from pathlib import Path

from sau.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "bundled.json"))
    ap.add_argument("--out-dir", default="runs/ablate")
    args = ap.parse_args()
    for kind in ("topk", "redistribution"):
        code = main(["ablate", "--config", args.config, "--kind", kind, "--out-dir", args.out_dir])
        if code:
            sys.exit(code)
        print((Path(args.out_dir) / f"ablate_{kind}_summary.csv").read_text())
