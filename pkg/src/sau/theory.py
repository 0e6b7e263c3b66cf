"""Numerical checks of the Fisher-information view of saliency and redistribution.

The toys here are small enough to enumerate: a fixed set of inputs, each
with a softmax over ``C`` classes.  :class:`SoftmaxToy` has two
parameterizations:

* direction mode (``directions`` given): one scalar per input,
  ``logits_x = base_x + theta_x * v_x``.  Every parameter touches a single
  input's distribution, so the Fisher matrix is exactly diagonal and the
  gap between the exact KL and ``0.5 * sum F_i dtheta_i**2`` is the pure
  Taylor remainder.
* table mode: a free logit table ``logits_x = base_x + theta_x``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor_core as tc
from .errors import ContractError
from .models import Model, ParamSet
from .sau_core import layer_pruned_importance, layer_redistribution


class SoftmaxToy(Model):
    """Enumerable softmax model; samples are ``(input_index, label)`` pairs."""

    def __init__(self, base: np.ndarray, directions: np.ndarray | None = None,
                 theta: np.ndarray | None = None):
        self.base = np.asarray(base, dtype=np.float64)
        self.n_inputs, self.n_classes = self.base.shape
        self.directions = None if directions is None else np.asarray(directions, dtype=np.float64)
        width = 1 if self.directions is not None else self.n_classes
        if theta is None:
            theta = np.zeros((self.n_inputs, width))
        theta = np.asarray(theta, dtype=np.float64).reshape(self.n_inputs, width)
        self.params = ParamSet({"theta": theta}, {"theta": False})

    @property
    def theta(self) -> np.ndarray:
        return self.params["theta"]

    def effective_logits(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64).reshape(self.theta.shape)
        if self.directions is not None:
            return self.base + theta * self.directions
        return self.base + theta

    def log_probs(self, theta: np.ndarray | None = None) -> np.ndarray:
        return tc.log_softmax_np(self.effective_logits(self.theta if theta is None else theta))

    def loss_tensor(self, tensors, batch) -> tc.Tensor:
        if len(batch) == 0:
            raise ContractError("empty batch")
        xs = np.array([int(s[0]) for s in batch])
        ys = np.array([int(s[1]) for s in batch])
        t = tc.embed(tensors["theta"], xs)
        if self.directions is not None:
            t = tc.mul(tc.matmul(t, tc.Tensor(np.ones((1, self.n_classes)))),
                       tc.Tensor(self.directions[xs]))
        logits = tc.add(t, tc.Tensor(self.base[xs]))
        return tc.softmax_cross_entropy(logits, ys)

    def predict(self, batch) -> np.ndarray:
        lp = self.log_probs()
        return lp[[int(s[0]) for s in batch]].argmax(axis=-1)

    def enumerate_samples(self) -> list[tuple[int, int]]:
        return [(x, y) for x in range(self.n_inputs) for y in range(self.n_classes)]

    def expected_fisher(self, theta: np.ndarray | None = None) -> np.ndarray:
        """``E_x E_{y ~ p(.|x)} [(d log p / d theta)^2]`` by enumeration and autodiff."""
        theta = self.theta if theta is None else np.asarray(theta).reshape(self.theta.shape)
        here = self.with_params(ParamSet({"theta": theta}, {"theta": False}))
        p = np.exp(here.log_probs())
        out = np.zeros_like(theta)
        for x, y in self.enumerate_samples():
            _, g = here.loss_and_grad([(x, y)])
            out += (p[x, y] / self.n_inputs) * g["theta"] ** 2
        return out

    def closed_form_fisher(self, theta: np.ndarray | None = None) -> np.ndarray:
        """Analytic expected diagonal Fisher."""
        p = np.exp(self.log_probs(theta))
        if self.directions is not None:
            v = self.directions
            var = (p * v * v).sum(-1) - (p * v).sum(-1) ** 2
            return (var / self.n_inputs)[:, None]
        return p * (1.0 - p) / self.n_inputs

    def closed_form_empirical_fisher(self, samples: Sequence[tuple[int, int]]) -> np.ndarray:
        """Mean over samples of squared NLL gradients, from ``dlogits = p - onehot(y)``."""
        p = np.exp(self.log_probs())
        out = np.zeros_like(self.theta)
        for x, y in samples:
            r = p[x].copy()
            r[y] -= 1.0
            if self.directions is not None:
                out[x, 0] += float(r @ self.directions[x]) ** 2
            else:
                out[x] += r ** 2
        return out / len(samples)


def make_toy(seed: int, n_inputs: int = 5, n_classes: int = 3, table: bool = False) -> SoftmaxToy:
    rng = tc.Rng(seed)
    base = tc.randn([n_inputs, n_classes], rng).data
    if table:
        return SoftmaxToy(base, None, tc.randn([n_inputs, n_classes], rng, stddev=0.5).data)
    directions = tc.randn([n_inputs, n_classes], rng).data
    theta = tc.randn([n_inputs], rng, stddev=0.5).data
    return SoftmaxToy(base, directions, theta)


def exact_kl(toy: SoftmaxToy, theta: np.ndarray, theta2: np.ndarray) -> float:
    """Mean over inputs of ``KL(p_theta(.|x) || p_theta2(.|x))``."""
    lp = toy.log_probs(theta)
    lq = toy.log_probs(theta2)
    if not np.all(np.isfinite(lq)):
        raise FloatingPointError("zero probability in the second distribution")
    per_input = (np.exp(lp) * (lp - lq)).sum(axis=-1)
    return float(per_input.mean())


def quadratic_kl(fisher, delta) -> float:
    """``0.5 * sum F_i * delta_i**2``; accepts arrays or name -> array maps."""
    if isinstance(fisher, dict) or hasattr(fisher, "scores"):
        scores = fisher.scores if hasattr(fisher, "scores") else fisher
        return math.fsum(
            0.5 * float(np.sum(np.asarray(scores[k]) * np.asarray(delta[k]) ** 2)) for k in scores
        )
    f = np.asarray(fisher, dtype=np.float64)
    d = np.asarray(delta, dtype=np.float64).reshape(f.shape)
    return 0.5 * math.fsum((f * d * d).reshape(-1).tolist())


def verify_theorem(toy: SoftmaxToy, direction, eps_list: Sequence[float] = (1e-1, 5e-2, 2.5e-2, 1.25e-2),
                   tol: float = 0.05) -> dict:
    """Relative error of the quadratic KL approximation along ``eps * direction``.

    Passes when the error shrinks strictly at every step of the schedule and
    ends below ``tol``.  Schedules where the exact KL is 0 are skipped.
    """
    eps = [float(e) for e in eps_list]
    if not eps or any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
        raise ContractError("eps_list must be strictly decreasing and positive")
    theta = toy.theta
    d = np.asarray(direction, dtype=np.float64).reshape(theta.shape)
    fisher = toy.expected_fisher(theta)
    rows = []
    for e in eps:
        delta = e * d
        kl = exact_kl(toy, theta, theta + delta)
        q = quadratic_kl(fisher, delta)
        if kl == 0.0:
            rows.append({"eps": e, "exact_kl": kl, "quadratic_kl": q, "rel_err": None, "skipped": True})
            continue
        rows.append({"eps": e, "exact_kl": kl, "quadratic_kl": q,
                     "rel_err": abs(kl - q) / kl, "skipped": False})
    errs = [r["rel_err"] for r in rows if not r["skipped"]]
    monotone = all(a > b for a, b in zip(errs, errs[1:]))
    final_ok = bool(errs) and errs[-1] < tol
    return {"eps_schedule": eps, "rows": rows, "tolerance": tol,
            "monotone": monotone, "final_below_tol": final_ok, "passed": monotone and final_ok}


def _layer_pairs(fisher, mask):
    if isinstance(fisher, dict) or hasattr(fisher, "scores"):
        f = fisher.scores if hasattr(fisher, "scores") else fisher
        m = mask.masks if hasattr(mask, "masks") else mask
        for name in m:
            yield np.asarray(f[name], dtype=np.float64), np.asarray(m[name])
    else:
        yield np.asarray(fisher, dtype=np.float64), np.asarray(mask)


def capacity_loss(fisher, mask) -> float:
    """Share of total Fisher mass sitting on pruned positions."""
    pruned, total = [], []
    for f, m in _layer_pairs(fisher, mask):
        if f.shape != m.shape:
            raise ContractError(f"fisher {f.shape} and mask {m.shape} differ")
        pruned.extend(f[m == 0].tolist())
        total.extend(f.reshape(-1).tolist())
    denom = math.fsum(total)
    if denom <= 0:
        raise ContractError("Fisher information is identically zero")
    return math.fsum(pruned) / denom


def verify_compensation(fisher, mask, alpha: float, tol: float = 1e-10) -> dict:
    """Compare ``sum_S W_i F_i`` with its exact expansion and the uniform form.

    Exact: ``sum_S F + alpha * I_pruned * sum_S F^2 / sum_S F``.
    Uniform (only checked when survivors' F are all equal):
    ``sum_S F + alpha * I_pruned * mean_S F``.
    """
    layers = []
    for f, m in _layer_pairs(fisher, mask):
        keep = m != 0
        if not np.any(keep):
            raise ContractError("mask has no survivors")
        w = layer_redistribution(f, m, alpha)
        fs = f[keep]
        sum_f = math.fsum(fs.tolist())
        ip = layer_pruned_importance(f, m)
        lhs = math.fsum((w[keep] * fs).tolist())
        exact = sum_f + alpha * ip * (math.fsum((fs * fs).tolist()) / sum_f) if sum_f > 0 else sum_f
        uniform = bool(np.all(fs == fs[0]))
        rhs_uniform = sum_f + alpha * ip * float(fs.mean())
        layers.append({
            "lhs": lhs, "exact_rhs": exact, "uniform_rhs": rhs_uniform,
            "uniform": uniform, "I_pruned": ip, "sum_surviving": sum_f,
            "exact_ok": abs(lhs - exact) <= tol,
            "uniform_ok": (abs(lhs - rhs_uniform) <= tol) if uniform else None,
        })
    passed = all(l["exact_ok"] and l["uniform_ok"] is not False for l in layers)
    return {"alpha": alpha, "tolerance": tol, "layers": layers, "passed": passed}


def run_suite(seed: int = 0, n_toys: int = 10, n_instances: int = 1000) -> dict:
    """All theory checks for the ``verify-theory`` command; deterministic in ``seed``."""
    from .saliency import compute_saliency, fisher_diag

    rng = tc.Rng(seed)
    report: dict = {"seed": seed}

    toys = []
    for i in range(n_toys):
        toy = make_toy(rng.next_u64() & 0xFFFFFFFF)
        d = tc.randn([toy.n_inputs], rng.next_u64() & 0xFFFFFFFF).data
        toys.append(verify_theorem(toy, d))
    report["kl_quadratic"] = {"toys": toys, "passed": all(t["passed"] for t in toys)}

    sym = SoftmaxToy(np.zeros((1, 3)), np.array([[1.0, 0.0, -1.0]]))
    sym_rep = verify_theorem(sym, np.ones(1))
    report["kl_symmetric"] = sym_rep

    uniform = []
    for _ in range(20):
        n = 1 + rng.below(256)
        m = np.ones(n, dtype=np.uint8)
        pruned = rng.below(n)
        m[[rng.below(n) for _ in range(pruned)]] = 0
        s = (n - np.count_nonzero(m)) / n
        uniform.append(abs(capacity_loss(np.full(n, 0.5), m) - s))
    report["capacity_uniform"] = {"max_abs_err": max(uniform), "passed": max(uniform) <= 1e-12}

    worst, ok = 0.0, True
    for _ in range(n_instances):
        n = 1 + rng.below(256)
        f = np.array([rng.uniform() for _ in range(n)])
        m = np.array([1 if rng.uniform() < 0.5 else 0 for _ in range(n)], dtype=np.uint8)
        m[rng.below(n)] = 1
        rep = verify_compensation(f, m, rng.uniform())
        lay = rep["layers"][0]
        worst = max(worst, abs(lay["lhs"] - lay["exact_rhs"]))
        ok = ok and rep["passed"]
    report["compensation_exact"] = {"instances": n_instances, "max_abs_err": worst, "passed": ok}
    uni = verify_compensation(np.array([2.0, 2.0, 2.0, 2.0, 4.0, 4.0]),
                              np.array([1, 1, 1, 1, 0, 0], dtype=np.uint8), 0.1)
    report["compensation_uniform"] = uni

    toy = make_toy(seed, table=True)
    samples = [(x, y) for x in range(toy.n_inputs) for y in range(toy.n_classes)][::2]
    fd = fisher_diag(toy, samples)["theta"]
    sal = compute_saliency(toy, samples, batch_size=1)["theta"]
    closed = toy.closed_form_empirical_fisher(samples)
    report["saliency_fisher"] = {
        "saliency_vs_fisher_max_abs": float(np.max(np.abs(fd - sal))),
        "fisher_vs_closed_form_max_abs": float(np.max(np.abs(fd - closed))),
        "passed": bool(np.max(np.abs(fd - sal)) < 1e-12 and np.max(np.abs(fd - closed)) < 1e-8),
    }
    report["passed"] = all(
        report[k]["passed"] for k in
        ("kl_quadratic", "kl_symmetric", "capacity_uniform", "compensation_exact",
         "compensation_uniform", "saliency_fisher")
    )
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
