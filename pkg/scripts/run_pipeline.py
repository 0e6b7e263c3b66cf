#!/usr/bin/env python3
"""Bundled recipe end to end: data -> train -> prune -> saliency -> plan -> unlearn -> eval."""

import argparse
import sys
from pathlib import Path

from sau.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(*argv) -> None:
    code = main(list(argv))
    if code:
        sys.exit(code)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "bundled.json"))
    ap.add_argument("--out-dir", default="runs/pipeline")
    args = ap.parse_args()
    d = Path(args.out_dir)
    c = ["--config", args.config]
    run("gen-data", *c, "--out", str(d / "data.txt"))
    run("train", *c, "--data", str(d / "data.txt"), "--out", str(d / "base.ckpt"))
    run("prune", *c, "--model", str(d / "base.ckpt"), "--data", str(d / "data.txt"), "--out", str(d / "pruned.ckpt"))
    run("saliency", *c, "--model", str(d / "pruned.ckpt"), "--data", str(d / "data.txt"), "--out", str(d / "saliency.ckpt"))
    run("plan", *c, "--saliency", str(d / "saliency.ckpt"), "--mask", str(d / "pruned.ckpt"), "--out", str(d / "plan.ckpt"))
    for variant in ("sau", "baseline"):
        extra = ["--plan", str(d / "plan.ckpt")] if variant == "sau" else []
        run("unlearn", *c, "--set", f"variant={variant}", "--model", str(d / "pruned.ckpt"),
            "--data", str(d / "data.txt"), *extra, "--out", str(d / f"unlearned_{variant}.ckpt"),
            "--manifest", str(d / f"manifest_{variant}.json"))
        run("eval", "--model", str(d / f"unlearned_{variant}.ckpt"), "--data", str(d / "data.txt"),
            "--out", str(d / f"score_{variant}.json"))
    print((d / "score_sau.json").read_text() + (d / "score_baseline.json").read_text())
