import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sau import tensor_core as tc
from sau.errors import ContractError
from sau.theory import (
    SoftmaxToy,
    capacity_loss,
    exact_kl,
    make_toy,
    quadratic_kl,
    run_suite,
    verify_compensation,
    verify_theorem,
)


def test_expected_fisher_matches_closed_form():
    for seed in range(5):
        toy = make_toy(seed)
        assert np.max(np.abs(toy.expected_fisher() - toy.closed_form_fisher())) < 1e-12


def test_kl_of_identical_distributions_is_zero():
    toy = make_toy(1)
    assert exact_kl(toy, toy.theta, toy.theta) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_quadratic_kl_error_shrinks(seed):
    toy = make_toy(100 + seed)
    d = tc.randn([toy.n_inputs], seed).data
    rep = verify_theorem(toy, d)
    assert rep["monotone"] and rep["final_below_tol"]


def test_symmetric_toy_has_second_order_error():
    toy = SoftmaxToy(np.zeros((1, 3)), np.array([[1.0, 0.0, -1.0]]))
    rep = verify_theorem(toy, np.ones(1), eps_list=(0.2, 0.1))
    e1, e2 = (r["rel_err"] for r in rep["rows"])
    assert e1 / e2 == pytest.approx(4.0, rel=0.05)  # odd terms cancel


def test_bad_schedule_rejected():
    with pytest.raises(ContractError):
        verify_theorem(make_toy(0), np.ones(5), eps_list=(0.1, 0.2))


def test_quadratic_kl_dict_form():
    f = {"a": np.array([2.0, 4.0])}
    assert quadratic_kl(f, {"a": np.array([1.0, 0.5])}) == 0.5 * (2.0 + 1.0)


def test_capacity_loss_examples():
    assert capacity_loss(np.ones(8), np.array([1, 1, 0, 0, 1, 1, 1, 0])) == 3 / 8
    assert capacity_loss(np.array([3.0, 1.0]), np.array([0, 1])) == 0.75
    with pytest.raises(ContractError):
        capacity_loss(np.zeros(2), np.array([1, 0]))


@given(st.integers(1, 200), st.integers(0, 10**6), st.floats(0.01, 100))
@settings(max_examples=100, deadline=None)
def test_uniform_fisher_capacity_loss_equals_sparsity(n, seed, level):
    r = tc.Rng(seed)
    m = np.array([r.below(2) for _ in range(n)], dtype=np.uint8)
    s = (n - np.count_nonzero(m)) / n
    assert abs(capacity_loss(np.full(n, level), m) - s) <= 1e-12


@given(st.integers(1, 256), st.integers(0, 10**6), st.floats(0, 2))
@settings(max_examples=200, deadline=None)
def test_compensation_exact_expansion(n, seed, alpha):
    r = tc.Rng(seed)
    f = np.array([r.uniform() for _ in range(n)])
    m = np.array([r.below(2) for _ in range(n)], dtype=np.uint8)
    m[r.below(n)] = 1
    lay = verify_compensation(f, m, alpha)["layers"][0]
    assert abs(lay["lhs"] - lay["exact_rhs"]) <= 1e-10


def test_compensation_uniform_form():
    rep = verify_compensation(np.array([2.0, 2.0, 2.0, 5.0]), np.array([1, 1, 1, 0]), 0.1)
    lay = rep["layers"][0]
    assert lay["uniform"] and lay["uniform_ok"]
    assert lay["uniform_rhs"] == pytest.approx(6.0 + 0.1 * 5.0 * 2.0, abs=1e-12)


def test_suite_passes_and_is_deterministic():
    a, b = run_suite(7, n_instances=100), run_suite(7, n_instances=100)
    assert a["passed"] and a == b
    assert math.isclose(a["saliency_fisher"]["saliency_vs_fisher_max_abs"], 0.0, abs_tol=1e-12)
