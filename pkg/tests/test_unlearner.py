import json

import numpy as np
import pytest

from sau.errors import ContractError, HashMismatchError, UnlearningError
from sau.models import exact_match
from sau.pruning import SparsityMask, apply_mask, magnitude_prune, sparsity_of
from sau.saliency import compute_saliency
from sau.sau_core import SAUConfig, build_plan
from sau.unlearner import RunManifest, UnlearnConfig, graddiff_step, pruned_max_abs, run_unlearning


@pytest.fixture(scope="module")
def sparse_setup(tiny_model, tiny_data):
    mask = magnitude_prune(tiny_model.params, 0.5)
    model = tiny_model.with_params(apply_mask(tiny_model.params, mask))
    plan = build_plan(compute_saliency(model, tiny_data.forget), mask, SAUConfig(0.3, 0.1))
    return model, mask, plan


def _cfg(**kw):
    base = dict(lr=0.05, retain_weight=1.0, epochs=3, forget_batch_size=4, retain_batch_size=4, seed=1)
    base.update(kw)
    return UnlearnConfig(**base)


def test_config_defaults_and_validation():
    c = UnlearnConfig()
    assert (c.lr, c.retain_weight, c.epochs) == (1e-2, 1.0, 50)
    for bad in (dict(lr=-1.0), dict(retain_weight=-1.0), dict(epochs=-1), dict(forget_batch_size=0),
                dict(variant="npo")):
        with pytest.raises(ContractError):
            UnlearnConfig(**bad)


@pytest.mark.parametrize("variant", ["sau", "baseline"])
def test_sparsity_is_preserved_every_epoch(sparse_setup, tiny_data, variant):
    model, mask, plan = sparse_setup
    s0 = sparsity_of(mask)
    seen = []
    params, man = run_unlearning(model, mask, plan, tiny_data.forget, tiny_data.retain,
                                 _cfg(variant=variant, lr=0.5, epochs=4),
                                 on_epoch=lambda e, p: seen.append(pruned_max_abs(p, mask)))
    assert seen == [0.0] * 5
    assert all(row["pruned_max_abs"] == 0.0 for row in man.metrics)
    assert sparsity_of(mask) == s0


def test_gradient_ascent_reduces_forget_exact_match(sparse_setup, tiny_data):
    model, mask, _ = sparse_setup
    before = exact_match(model, tiny_data.forget)
    params, _ = run_unlearning(model, mask, None, tiny_data.forget, tiny_data.retain,
                               _cfg(variant="baseline", lr=0.2, epochs=5, retain_weight=0.0))
    assert exact_match(model.with_params(params), tiny_data.forget) < before


def test_lr_zero_keeps_params(sparse_setup, tiny_data):
    model, mask, plan = sparse_setup
    params, man = run_unlearning(model, mask, plan, tiny_data.forget, tiny_data.retain, _cfg(lr=0.0))
    assert params.bitwise_equal(model.params)
    assert man.hashes["initial_params"] == man.hashes["final_params"]


def test_zero_epochs_records_initial_metrics(sparse_setup, tiny_data):
    model, mask, plan = sparse_setup
    _, man = run_unlearning(model, mask, plan, tiny_data.forget, tiny_data.retain, _cfg(epochs=0))
    assert len(man.metrics) == 1 and man.metrics[0]["epoch"] == 0


def test_sau_updates_only_selected_weights(sparse_setup, tiny_data):
    model, mask, plan = sparse_setup
    new = graddiff_step(model, model.params, plan, tiny_data.forget[:4], tiny_data.retain[:4], 1.0, 0.1)
    for name in plan.names():
        changed = new[name] != model.params[name]
        assert not np.any(changed & (plan.G[name] == 0))


def test_retain_weight_zero_skips_retain_set(sparse_setup, tiny_data):
    model, mask, plan = sparse_setup
    a = graddiff_step(model, model.params, mask, tiny_data.forget[:4], [], 0.0, 0.1)
    b = graddiff_step(model, model.params, mask, tiny_data.forget[:4], tiny_data.retain[:4], 0.0, 0.1)
    assert a.bitwise_equal(b)


def test_plan_for_other_mask_is_rejected(sparse_setup, tiny_data):
    model, mask, plan = sparse_setup
    other = magnitude_prune(model.params, 0.25)
    with pytest.raises(HashMismatchError):
        run_unlearning(model.with_params(apply_mask(model.params, other)), other, plan,
                       tiny_data.forget, tiny_data.retain, _cfg())


def test_unpruned_params_are_rejected(tiny_model, sparse_setup, tiny_data):
    _, mask, plan = sparse_setup
    with pytest.raises(ContractError):
        run_unlearning(tiny_model, mask, plan, tiny_data.forget, tiny_data.retain, _cfg())


def test_missing_inputs_rejected(sparse_setup, tiny_data):
    model, mask, plan = sparse_setup
    with pytest.raises(ContractError):
        run_unlearning(model, mask, plan, [], tiny_data.retain, _cfg())
    with pytest.raises(ContractError):
        run_unlearning(model, mask, None, tiny_data.forget, tiny_data.retain, _cfg(variant="sau"))
    with pytest.raises(ContractError):
        run_unlearning(model, mask, plan, tiny_data.forget, [], _cfg())


def test_divergence_raises_with_location(sparse_setup, tiny_data):
    model, mask, _ = sparse_setup
    with np.errstate(all="ignore"), pytest.raises(UnlearningError) as info:
        run_unlearning(model, mask, None, tiny_data.forget, tiny_data.retain,
                       _cfg(variant="baseline", lr=1e8, retain_weight=0.0, epochs=20))
    assert info.value.epoch >= 1


def test_runs_are_deterministic_and_manifest_round_trips(sparse_setup, tiny_data):
    model, mask, plan = sparse_setup
    p1, m1 = run_unlearning(model, mask, plan, tiny_data.forget, tiny_data.retain, _cfg())
    p2, m2 = run_unlearning(model, mask, plan, tiny_data.forget, tiny_data.retain, _cfg())
    assert p1.bitwise_equal(p2) and m1.to_json() == m2.to_json()
    assert m1.wall_clock_s is None
    assert RunManifest.from_json(m1.to_json()).to_json() == m1.to_json()
    assert m1.to_csv().splitlines()[0] == "epoch,forget_loss,retain_loss,forget_em,retain_em"
    assert json.loads(m1.to_json())["config"]["topk"] == 0.3


def test_k1_alpha0_matches_baseline_bitwise(sparse_setup, tiny_data):
    model, mask, _ = sparse_setup
    full = build_plan(compute_saliency(model, tiny_data.forget), mask, SAUConfig(1.0, 0.0))
    a, _ = run_unlearning(model, mask, full, tiny_data.forget, tiny_data.retain, _cfg(variant="sau"))
    b, _ = run_unlearning(model, mask, None, tiny_data.forget, tiny_data.retain, _cfg(variant="baseline"))
    assert a.bitwise_equal(b)


def test_dense_mask_baseline_is_plain_graddiff(tiny_model, tiny_data):
    dense = SparsityMask.dense(tiny_model.params)
    step = graddiff_step(tiny_model, tiny_model.params, dense, tiny_data.forget[:2], tiny_data.retain[:2], 1.0, 0.1)
    _, gf = tiny_model.loss_and_grad(tiny_data.forget[:2])
    _, gr = tiny_model.loss_and_grad(tiny_data.retain[:2])
    for k in gf:
        assert np.array_equal(step[k], tiny_model.params[k] - 0.1 * (-gf[k] + 1.0 * gr[k]))
