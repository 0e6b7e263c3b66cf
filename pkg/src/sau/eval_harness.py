"""Desk-scale experiments: sparsity sweep, resurfacing, top-k and redistribution ablations.

Every cell (pruner, sparsity, variant, top-k, alpha, seed) is independent:
it prunes its own copy of the base model, builds its own plan and runs its
own unlearning.  The unlearning seed of a cell is derived from
``(seed, sparsity)`` only, so variants at the same sparsity see identical
batch orders and can be compared seed by seed.

Scores are the toy analog of forget quality / utility (see
:mod:`sau.scoring`), not the composite benchmark metrics.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import SAUError
from .models import FactDataset, Model, build_model, exact_match, gen_facts, train
from .pruning import SparsityMask, apply_mask, prune, sparsity_of
from .sau_core import SAUConfig, build_plan
from .saliency import compute_saliency
from .scoring import ScoreCard, harmonic, score
from .unlearner import RunManifest, UnlearnConfig, run_unlearning

SWEEP_COLUMNS = ("pruner", "sparsity", "variant", "topk", "alpha", "seed", "fq", "utility",
                 "aggregate", "forget_em", "retain_em", "epochs", "wall_ms")
SUMMARY_COLUMNS = ("pruner", "sparsity", "variant", "topk", "alpha", "n", "n_failed",
                   "aggregate_mean", "aggregate_std", "fq_mean", "utility_mean")

SCORE_NOTE = ("desk-scale analog: fq = 1 - exact-match on the forget split, utility = exact-match "
              "on the retain split, aggregate = harmonic mean; not the benchmark composite metrics")


def prepare_base(cfg: ExperimentConfig) -> tuple[FactDataset, Model]:
    """Generate the fact task and pre-train the dense model to memorize it."""
    ds = gen_facts(cfg.n_facts, cfg.vocab, cfg.key_len, cfg.val_len, cfg.forget_fraction, cfg.data_seed)
    model = build_model(cfg.model_config())
    result = train(model, ds, cfg.train_lr, cfg.train_epochs, cfg.train_batch_size, cfg.train_seed)
    return ds, model.with_params(result.params)


def cell_seed(seed: int, sparsity: float) -> int:
    digest = hashlib.sha256(f"{int(seed)}|{float(sparsity)!r}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class Cell:
    pruner: str
    sparsity: float
    variant: str
    topk: float
    alpha: float
    seed: int

    def key(self):
        return (self.pruner, self.sparsity, self.variant, self.topk, self.alpha, self.seed)


def run_cell(base: Model, ds: FactDataset, cfg: ExperimentConfig, cell: Cell,
             keep_params: bool = False):
    """Prune -> (saliency -> plan) -> unlearn -> score for one cell.

    Returns ``(row, manifest, params)``; ``params`` is None unless requested.
    """
    start = time.perf_counter()
    mask = prune(base, cell.pruner, cell.sparsity, ds.retain[: cfg.calibration_size])
    sparse = base.with_params(apply_mask(base.params, mask))
    plan = None
    if cell.variant == "sau":
        sal = compute_saliency(sparse, ds.forget, cfg.saliency_batch_size)
        plan = build_plan(sal, mask, SAUConfig(cell.topk, cell.alpha))
    ucfg = cfg.unlearn_config(variant=cell.variant, seed=cell_seed(cell.seed, cell.sparsity))
    extra = {"pruner": cell.pruner, "sparsity": cell.sparsity, "base_seed": cell.seed,
             "topk": cell.topk, "alpha": cell.alpha,
             "calibration_size": cfg.calibration_size,
             "saliency_batch_size": cfg.saliency_batch_size}
    s_before = sparsity_of(mask)
    params, manifest = run_unlearning(sparse, mask, plan, ds.forget, ds.retain, ucfg,
                                      record_timing=cfg.record_timing, extra=extra)
    manifest.hashes["base_params"] = base.params.content_hash()
    if sparsity_of(mask) != s_before:
        raise SAUError("mask changed during unlearning")
    last = manifest.metrics[-1]
    card = ScoreCard(**manifest.final)
    wall_ms = round((time.perf_counter() - start) * 1000.0, 3) if cfg.record_timing else 0
    row = {
        "pruner": cell.pruner, "sparsity": cell.sparsity, "variant": cell.variant,
        "topk": cell.topk, "alpha": cell.alpha, "seed": cell.seed,
        "fq": card.forget_quality, "utility": card.utility, "aggregate": card.aggregate,
        "forget_em": last["forget_em"], "retain_em": last["retain_em"],
        "epochs": ucfg.epochs, "wall_ms": wall_ms,
    }
    return row, manifest, (params if keep_params else None)


def _failed_row(cell: Cell, cfg: ExperimentConfig) -> dict:
    nan = float("nan")
    return {"pruner": cell.pruner, "sparsity": cell.sparsity, "variant": cell.variant,
            "topk": cell.topk, "alpha": cell.alpha, "seed": cell.seed, "fq": nan, "utility": nan,
            "aggregate": nan, "forget_em": nan, "retain_em": nan, "epochs": cfg.epochs, "wall_ms": 0}


def _run_safe(args):
    base, ds, cfg, cell = args
    try:
        row, manifest, _ = run_cell(base, ds, cfg, cell)
        return cell, row, manifest, None
    except SAUError as exc:
        return cell, _failed_row(cell, cfg), None, f"{type(exc).__name__}: {exc}"


@dataclass
class SweepResult:
    rows: list[dict]
    manifests: dict[str, RunManifest]
    errors: dict[str, str]

    def summary(self) -> list[dict]:
        return summarize(self.rows)


def cell_id(cell: Cell) -> str:
    return (f"{cell.pruner}_s{cell.sparsity:g}_{cell.variant}_k{cell.topk:g}"
            f"_a{cell.alpha:g}_seed{cell.seed}")


def run_cells(base: Model, ds: FactDataset, cfg: ExperimentConfig, cells: list[Cell]) -> SweepResult:
    jobs = [(base, ds, cfg, c) for c in cells]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_safe, jobs))
    else:
        results = [_run_safe(j) for j in jobs]
    results.sort(key=lambda r: r[0].key())
    rows, manifests, errors = [], {}, {}
    for cell, row, manifest, err in results:
        rows.append(row)
        if manifest is not None:
            manifests[cell_id(cell)] = manifest
        if err is not None:
            errors[cell_id(cell)] = err
    return SweepResult(rows, manifests, errors)


def sparsity_sweep(base: Model, ds: FactDataset, cfg: ExperimentConfig,
                   pruner: str | None = None, sparsity_list=None, variants=None, seeds=None) -> SweepResult:
    pruner = pruner or cfg.pruner
    cells = [
        Cell(pruner, float(s), v, cfg.topk if v == "sau" else 1.0, cfg.alpha if v == "sau" else 0.0, int(seed))
        for s in (sparsity_list if sparsity_list is not None else cfg.sparsity_list)
        for v in (variants or cfg.variants)
        for seed in (seeds if seeds is not None else cfg.seeds)
    ]
    return run_cells(base, ds, cfg, cells)


def ablation_topk(base: Model, ds: FactDataset, cfg: ExperimentConfig, sparsity: float | None = None,
                  k_list=None, seeds=None) -> SweepResult:
    s = cfg.sparsity if sparsity is None else sparsity
    cells = [Cell(cfg.pruner, float(s), "sau", float(k), cfg.alpha, int(seed))
             for k in (k_list if k_list is not None else cfg.k_list)
             for seed in (seeds if seeds is not None else cfg.seeds)]
    return run_cells(base, ds, cfg, cells)


def ablation_redistribution(base: Model, ds: FactDataset, cfg: ExperimentConfig,
                            sparsity: float | None = None, seeds=None) -> SweepResult:
    """Gradient mask only (alpha = 0) against mask plus redistribution (configured alpha)."""
    s = cfg.sparsity if sparsity is None else sparsity
    cells = [Cell(cfg.pruner, float(s), "sau", cfg.topk, float(a), int(seed))
             for a in (0.0, cfg.alpha)
             for seed in (seeds if seeds is not None else cfg.seeds)]
    return run_cells(base, ds, cfg, cells)


def redistribution_deltas(result: SweepResult) -> list[dict]:
    """Per-seed (with - without redistribution) differences."""
    by = {}
    for r in result.rows:
        by.setdefault(r["seed"], {})[r["alpha"] > 0] = r
    out = []
    for seed in sorted(by):
        pair = by[seed]
        if True in pair and False in pair:
            on, off = pair[True], pair[False]
            out.append({"seed": seed, **{f"delta_{k}": on[k] - off[k] for k in ("aggregate", "fq", "utility")}})
    return out


def replay_cell(base: Model, ds: FactDataset, cfg: ExperimentConfig, manifest: RunManifest) -> ScoreCard:
    """Re-run the cell a manifest describes and return its score card."""
    c = manifest.config
    cell = Cell(c["pruner"], c["sparsity"], c["variant"], c["topk"], c["alpha"], c["base_seed"])
    row, _, _ = run_cell(base, ds, cfg, cell)
    return ScoreCard(row["fq"], row["utility"], row["aggregate"])


# ---------------------------------------------------------------------------
# resurfacing

def resurfacing_experiment(base: Model, ds: FactDataset, cfg: ExperimentConfig,
                           pruner: str | None = None, sparsity: float | None = None) -> dict:
    """Unlearn the dense model, then prune it, and see whether forgotten facts return.

    The control arm prunes the never-unlearned model, separating resurfacing
    from generic pruning damage.  Nothing is asserted about the direction.
    """
    pruner = pruner or cfg.pruner
    s = cfg.sparsity if sparsity is None else sparsity
    calib = ds.retain[: cfg.calibration_size]
    dense = SparsityMask.dense(base.params)
    ucfg = cfg.unlearn_config(variant="baseline", seed=cfg.seed)
    params, manifest = run_unlearning(base, dense, None, ds.forget, ds.retain, ucfg)
    unlearned = base.with_params(params)

    def arm(model: Model) -> dict:
        mask = prune(model, pruner, s, calib)
        pruned = model.with_params(apply_mask(model.params, mask))
        before = (exact_match(model, ds.forget), exact_match(model, ds.retain))
        after = (exact_match(pruned, ds.forget), exact_match(pruned, ds.retain))
        return {
            "forget_em_before": before[0], "forget_em_after": after[0],
            "delta_forget_em": after[0] - before[0],
            "retain_em_before": before[1], "retain_em_after": after[1],
            "delta_retain_em": after[1] - before[1],
            "achieved_sparsity": sparsity_of(mask),
        }

    return {
        "pruner": pruner, "sparsity": s,
        "unlearned_then_pruned": arm(unlearned),
        "control_pruned_only": arm(base),
        "unlearning": {"config": manifest.config, "final": manifest.final},
        "observation": "delta_forget_em > 0 in the unlearned arm would indicate resurfacing",
        "note": SCORE_NOTE,
    }


# ---------------------------------------------------------------------------
# reporting

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict], columns=SWEEP_COLUMNS) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(r[c]) for c in columns) + "\n")
    return buf.getvalue()


def csv_to_rows(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        vals = ln.split(",")
        row = {}
        for k, v in zip(header, vals):
            if k in ("pruner", "variant"):
                row[k] = v
            elif k in ("seed", "epochs", "n", "n_failed"):
                row[k] = int(v)
            else:
                row[k] = float(v)
        rows.append(row)
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["pruner"], r["sparsity"], r["variant"], r["topk"], r["alpha"]), []).append(r)
    out = []
    for key in sorted(groups):
        rs = groups[key]
        ok = [r for r in rs if not math.isnan(r["aggregate"])]
        agg = [r["aggregate"] for r in ok]
        out.append({
            "pruner": key[0], "sparsity": key[1], "variant": key[2], "topk": key[3], "alpha": key[4],
            "n": len(ok), "n_failed": len(rs) - len(ok),
            "aggregate_mean": statistics.fmean(agg) if agg else float("nan"),
            "aggregate_std": statistics.stdev(agg) if len(agg) > 1 else 0.0,
            "fq_mean": statistics.fmean([r["fq"] for r in ok]) if ok else float("nan"),
            "utility_mean": statistics.fmean([r["utility"] for r in ok]) if ok else float("nan"),
        })
    return out


def series_label(row: dict) -> str:
    if row["variant"] == "sau":
        return f"sau k={row['topk']:g} a={row['alpha']:g}"
    return row["variant"]


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def render_svg(rows: list[dict], width: int = 800, height: int = 500) -> str:
    """Mean aggregate vs sparsity, one polyline per variant series."""
    summary = summarize(rows)
    series: dict[str, list[tuple[float, float]]] = {}
    for r in summary:
        if not math.isnan(r["aggregate_mean"]):
            series.setdefault(series_label(r), []).append((r["sparsity"], r["aggregate_mean"]))
    left, right, top, bottom = 70, 180, 30, 60
    pw, ph = width - left - right, height - top - bottom
    xs = [x for pts in series.values() for x, _ in pts] or [0.0]
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - y) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for i in range(6):
        y = i / 5
        out.append(f'<line x1="{left - 5}" y1="{py(y):.2f}" x2="{left}" y2="{py(y):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py(y) + 4:.2f}" font-size="12" text-anchor="end">{y:.1f}</text>')
    for x in sorted(set(xs)):
        out.append(f'<line x1="{px(x):.2f}" y1="{top + ph}" x2="{px(x):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(x):.2f}" y="{top + ph + 20}" font-size="12" text-anchor="middle">{x:g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 15}" font-size="14" text-anchor="middle">sparsity</text>')
    out.append(f'<text x="20" y="{top + ph / 2:.2f}" font-size="14" text-anchor="middle" '
               f'transform="rotate(-90 20 {top + ph / 2:.2f})">aggregate</text>')
    for i, (label, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[i % len(_PALETTE)]
        pts = sorted(pts)
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>')
        ly = top + 10 + 20 * i
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 35}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 40}" y="{ly + 4}" font-size="12">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(rows: list[dict], out_dir=None, stem: str = "sweep") -> dict[str, str]:
    """CSV (long format), summary CSV and SVG chart; written to ``out_dir`` if given."""
    if not rows:
        raise ValueError("cannot report an empty table")
    files = {
        f"{stem}.csv": rows_to_csv(rows),
        f"{stem}_summary.csv": rows_to_csv(summarize(rows), SUMMARY_COLUMNS),
        f"{stem}.svg": render_svg(rows),
    }
    if out_dir is not None:
        from .checkpoint import atomic_write_text
        for name, text in files.items():
            atomic_write_text(Path(out_dir) / name, text)
    return files


def write_result(result: SweepResult, out_dir, stem: str = "sweep", extra: dict | None = None) -> dict[str, str]:
    from .checkpoint import atomic_write_text
    files = emit_report(result.rows, out_dir, stem)
    meta = {"errors": result.errors, "note": SCORE_NOTE, **(extra or {})}
    atomic_write_text(Path(out_dir) / f"{stem}_meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for cid, man in sorted(result.manifests.items()):
        atomic_write_text(Path(out_dir) / "manifests" / f"{stem}_{cid}.json", man.to_json())
    return files
