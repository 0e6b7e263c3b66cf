import math
import re
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sau import eval_harness as eh
from sau.scoring import ScoreCard, harmonic, score


# -- scoring --------------------------------------------------------------

def test_score_card_examples():
    assert ScoreCard.from_em(1.0, 1.0) == ScoreCard(0.0, 1.0, 0.0)
    assert ScoreCard.from_em(0.0, 1.0) == ScoreCard(1.0, 1.0, 1.0)
    assert ScoreCard.from_em(0.5, 1.0).aggregate == pytest.approx(2 / 3, rel=1e-15)


unit = st.floats(0, 1)


@given(unit, unit)
def test_harmonic_mean_properties(a, b):
    h = harmonic(a, b)
    assert h == harmonic(b, a)
    # a harmonic mean sits between min and max, and never above twice the min
    if min(a, b) > 0:
        assert min(a, b) * (1 - 1e-12) <= h <= max(a, b) * (1 + 1e-12)
    assert h <= 2 * min(a, b) + 1e-15
    assert harmonic(a, a) == pytest.approx(a, abs=1e-15)
    assert harmonic(0.0, a) == 0.0


def test_memorized_model_scores_zero_forgetting(tiny_model, tiny_data):
    card = score(tiny_model, tiny_data)
    assert (card.forget_quality, card.utility, card.aggregate) == (0.0, 1.0, 0.0)


# -- sweeps ---------------------------------------------------------------

@pytest.fixture(scope="module")
def sweep(tiny_base, tiny_experiment):
    ds, base = tiny_base
    return eh.sparsity_sweep(base, ds, tiny_experiment)


def test_sweep_covers_every_cell(sweep, tiny_experiment):
    cfg = tiny_experiment
    assert len(sweep.rows) == len(cfg.sparsity_list) * len(cfg.variants) * len(cfg.seeds)
    assert not sweep.errors
    keys = {(r["sparsity"], r["variant"], r["seed"]) for r in sweep.rows}
    assert len(keys) == len(sweep.rows)
    for r in sweep.rows:
        lo, hi = min(r["fq"], r["utility"]), max(r["fq"], r["utility"])
        assert r["aggregate"] == 0.0 or lo - 1e-15 <= r["aggregate"] <= hi + 1e-15
        assert r["wall_ms"] == 0 and r["epochs"] == cfg.epochs


def test_sweep_is_deterministic(sweep, tiny_base, tiny_experiment):
    ds, base = tiny_base
    again = eh.sparsity_sweep(base, ds, tiny_experiment)
    assert eh.rows_to_csv(again.rows) == eh.rows_to_csv(sweep.rows)


def test_cells_replay_from_manifests(sweep, tiny_base, tiny_experiment):
    ds, base = tiny_base
    for cid, man in list(sweep.manifests.items())[:3]:
        assert eh.replay_cell(base, ds, tiny_experiment, man) == ScoreCard(**man.final)


def test_dense_baseline_cell_is_plain_graddiff(tiny_base, tiny_experiment):
    from sau.pruning import SparsityMask
    from sau.unlearner import run_unlearning

    ds, base = tiny_base
    row, _, params = eh.run_cell(base, ds, tiny_experiment, eh.Cell("magnitude", 0.0, "baseline", 1.0, 0.0, 0),
                                 keep_params=True)
    ucfg = tiny_experiment.unlearn_config(variant="baseline", seed=eh.cell_seed(0, 0.0))
    direct, _ = run_unlearning(base, SparsityMask.dense(base.params), None, ds.forget, ds.retain, ucfg)
    assert params.bitwise_equal(direct)


def test_failed_cells_are_recorded(tiny_base, tiny_experiment):
    from dataclasses import replace
    ds, base = tiny_base
    cfg = replace(tiny_experiment, lr=1e8, retain_weight=0.0, epochs=30)
    import numpy as np
    with np.errstate(all="ignore"):
        res = eh.sparsity_sweep(base, ds, cfg, sparsity_list=[0.0], variants=["baseline"], seeds=[0])
    assert len(res.errors) == 1 and math.isnan(res.rows[0]["aggregate"])
    assert res.summary()[0]["n_failed"] == 1


def test_topk_one_alpha_zero_matches_baseline(tiny_base, tiny_experiment):
    ds, base = tiny_base
    a, _, pa = eh.run_cell(base, ds, tiny_experiment, eh.Cell("magnitude", 0.5, "sau", 1.0, 0.0, 1), True)
    b, _, pb = eh.run_cell(base, ds, tiny_experiment, eh.Cell("magnitude", 0.5, "baseline", 1.0, 0.0, 1), True)
    assert pa.bitwise_equal(pb)


def test_ablations(tiny_base, tiny_experiment):
    ds, base = tiny_base
    topk = eh.ablation_topk(base, ds, tiny_experiment)
    assert sorted({r["topk"] for r in topk.rows}) == tiny_experiment.k_list
    red = eh.ablation_redistribution(base, ds, tiny_experiment)
    assert sorted({r["alpha"] for r in red.rows}) == [0.0, tiny_experiment.alpha]
    deltas = eh.redistribution_deltas(red)
    assert [d["seed"] for d in deltas] == tiny_experiment.seeds


def test_resurfacing_report(tiny_base, tiny_experiment):
    ds, base = tiny_base
    rep = eh.resurfacing_experiment(base, ds, tiny_experiment)
    for arm in ("unlearned_then_pruned", "control_pruned_only"):
        a = rep[arm]
        assert a["delta_forget_em"] == pytest.approx(a["forget_em_after"] - a["forget_em_before"])
    assert rep["control_pruned_only"]["forget_em_before"] == 1.0


def test_resurfacing_at_zero_sparsity_is_a_no_op(tiny_base, tiny_experiment):
    ds, base = tiny_base
    rep = eh.resurfacing_experiment(base, ds, tiny_experiment, sparsity=0.0)
    assert rep["unlearned_then_pruned"]["delta_forget_em"] == 0.0


# -- reports --------------------------------------------------------------

def _row(s, variant, agg, seed=0):
    return {"pruner": "magnitude", "sparsity": s, "variant": variant, "topk": 0.3 if variant == "sau" else 1.0,
            "alpha": 0.1 if variant == "sau" else 0.0, "seed": seed, "fq": agg, "utility": agg,
            "aggregate": agg, "forget_em": 1 - agg, "retain_em": agg, "epochs": 5, "wall_ms": 0}


def test_csv_round_trip_and_columns():
    rows = [_row(0.0, "baseline", 0.5), _row(0.5, "sau", 1 / 3)]
    text = eh.rows_to_csv(rows)
    assert text.splitlines()[0] == ",".join(eh.SWEEP_COLUMNS)
    assert eh.csv_to_rows(text) == rows


def test_summary_mean_and_std():
    rows = [_row(0.0, "baseline", a, seed=i) for i, a in enumerate([0.2, 0.4, 0.6])]
    (s,) = eh.summarize(rows)
    assert s["aggregate_mean"] == pytest.approx(0.4) and s["aggregate_std"] == pytest.approx(0.2)


def test_svg_single_point():
    svg = eh.render_svg([_row(0.5, "baseline", 0.5)])
    root = ET.fromstring(svg)
    assert root.get("width") == "800" and root.get("height") == "500"
    assert svg.count("<circle") == 1 and svg.count("<polyline") == 1


def test_svg_two_variants_four_points():
    rows = [_row(s, v, 0.5) for s in (0.0, 0.25, 0.5, 0.75) for v in ("baseline", "sau")]
    svg = eh.render_svg(rows)
    lines = re.findall(r'<polyline[^>]*points="([^"]*)"', svg)
    assert len(lines) == 2 and all(len(p.split()) == 4 for p in lines)
    assert "baseline" in svg and "sau k=0.3 a=0.1" in svg
    assert svg == eh.render_svg(list(reversed(rows)))


def test_emit_report_writes_files(tmp_path):
    files = eh.emit_report([_row(0.0, "baseline", 0.5)], tmp_path, "x")
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(files)
    with pytest.raises(ValueError):
        eh.emit_report([])


def test_parallel_sweep_matches_serial(sweep, tiny_base, tiny_experiment):
    from dataclasses import replace
    ds, base = tiny_base
    par = eh.sparsity_sweep(base, ds, replace(tiny_experiment, workers=2))
    assert eh.rows_to_csv(par.rows) == eh.rows_to_csv(sweep.rows)
    assert {k: m.to_json() for k, m in par.manifests.items()} == \
        {k: m.to_json() for k, m in sweep.manifests.items()}
