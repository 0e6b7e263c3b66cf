"""Seeded reverse-mode vs central-difference checks for every op and both models."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor_core as tc
from .models import Fact, ModelConfig, build_model


def _arr(rng: tc.Rng, *shape) -> np.ndarray:
    return tc.randn(list(shape), rng).data


def _dims(rng: tc.Rng) -> tuple[int, int, int]:
    return 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)


def _projected(out: tc.Tensor, proj: np.ndarray) -> tc.Tensor:
    # a fixed random projection makes every output entry matter
    return tc.sum_all(tc.mul(out, tc.Tensor(proj)))


def _case_matmul(rng):
    n, k, m = _dims(rng)
    inputs = {"a": _arr(rng, n, k), "b": _arr(rng, k, m)}
    proj = _arr(rng, n, m)
    return inputs, lambda t: _projected(tc.matmul(t["a"], t["b"]), proj)


def _case_add(rng):
    n, k, _ = _dims(rng)
    broadcast = rng.below(2) == 1
    inputs = {"a": _arr(rng, n, k), "b": _arr(rng, k) if broadcast else _arr(rng, n, k)}
    proj = _arr(rng, n, k)
    return inputs, lambda t: _projected(tc.add(t["a"], t["b"]), proj)


def _case_sub(rng):
    n, k, _ = _dims(rng)
    inputs = {"a": _arr(rng, n, k), "b": _arr(rng, n, k)}
    proj = _arr(rng, n, k)
    return inputs, lambda t: _projected(tc.sub(t["a"], t["b"]), proj)


def _case_mul(rng):
    n, k, _ = _dims(rng)
    inputs = {"a": _arr(rng, n, k), "b": _arr(rng, n, k)}
    proj = _arr(rng, n, k)
    return inputs, lambda t: _projected(tc.mul(t["a"], t["b"]), proj)


def _case_scale(rng):
    n, k, _ = _dims(rng)
    c = rng.uniform() * 4 - 2
    inputs = {"a": _arr(rng, n, k)}
    proj = _arr(rng, n, k)
    return inputs, lambda t: _projected(tc.scale(t["a"], c), proj)


def _case_relu(rng):
    n, k, _ = _dims(rng)
    a = _arr(rng, n, k)
    a[np.abs(a) < 1e-3] = 0.5  # keep clear of the kink
    proj = _arr(rng, n, k)
    return {"a": a}, lambda t: _projected(tc.relu(t["a"]), proj)


def _case_square(rng):
    n, k, _ = _dims(rng)
    proj = _arr(rng, n, k)
    return {"a": _arr(rng, n, k)}, lambda t: _projected(tc.square(t["a"]), proj)


def _case_embed(rng):
    rows, d, n = _dims(rng)
    idx = np.array([rng.below(rows) for _ in range(n)])
    proj = _arr(rng, n, d)
    return {"table": _arr(rng, rows, d)}, lambda t: _projected(tc.embed(t["table"], idx), proj)


def _case_reshape(rng):
    n, k, _ = _dims(rng)
    proj = _arr(rng, k, n)
    return {"a": _arr(rng, n, k)}, lambda t: _projected(tc.reshape(t["a"], (k, n)), proj)


def _case_transpose(rng):
    n, k, _ = _dims(rng)
    proj = _arr(rng, k, n)
    return {"a": _arr(rng, n, k)}, lambda t: _projected(tc.transpose(t["a"]), proj)


def _case_sum_all(rng):
    n, k, _ = _dims(rng)
    return {"a": _arr(rng, n, k)}, lambda t: tc.scale(tc.sum_all(t["a"]), 1.7)


def _case_linear(rng):
    n, i, o = _dims(rng)
    inputs = {"x": _arr(rng, n, i), "w": _arr(rng, o, i), "b": _arr(rng, o)}
    proj = _arr(rng, n, o)
    return inputs, lambda t: _projected(tc.linear(t["x"], t["w"], t["b"]), proj)


def _case_cross_entropy(rng):
    n, c, _ = _dims(rng)
    c += 1
    target = [rng.below(c) for _ in range(n)]
    weights = [rng.uniform() + 0.1 for _ in range(n)]
    return {"z": _arr(rng, n, c)}, lambda t: tc.softmax_cross_entropy(t["z"], target, weights)


OP_CASES: dict[str, Callable] = {
    "matmul": _case_matmul, "add": _case_add, "sub": _case_sub, "mul": _case_mul,
    "scale": _case_scale, "relu": _case_relu, "square": _case_square, "embed": _case_embed,
    "reshape": _case_reshape, "transpose": _case_transpose, "sum_all": _case_sum_all,
    "linear": _case_linear, "softmax_cross_entropy": _case_cross_entropy,
}


def _compare(inputs: dict[str, np.ndarray], build, h: float) -> float:
    leaves = {k: tc.Tensor(v, requires_grad=True) for k, v in inputs.items()}
    analytic = tc.backward(build(leaves), leaves)

    def f(vals):
        return build({k: tc.Tensor(v) for k, v in vals.items()}).item()

    numeric = tc.finite_diff_grad(f, inputs, h)
    flat_a = np.concatenate([analytic[k].reshape(-1) for k in inputs])
    flat_n = np.concatenate([numeric[k].reshape(-1) for k in inputs])
    return tc.relative_error(flat_a, flat_n)


def check_op(name: str, seed: int, h: float = 1e-5) -> float:
    inputs, build = OP_CASES[name](tc.Rng(seed))
    return _compare(inputs, build, h)


def small_model_case(arch: str, seed: int):
    """A tiny model with non-zero parameters everywhere plus a random fact batch."""
    rng = tc.Rng(seed)
    vocab, key_len, val_len = 3 + rng.below(4), 1 + rng.below(3), 1 + rng.below(3)
    cfg = ModelConfig(arch=arch, vocab=vocab, key_len=key_len, val_len=val_len, embed_dim=3,
                      hidden=(4, 3), seed=seed)
    model = build_model(cfg)
    # zero-initialized tensors would make some gradient paths trivially vanish
    params = model.params.replace({k: v + 0.3 * _arr(rng, *v.shape) for k, v in model.params.items()})
    batch = [Fact(tuple(rng.below(vocab) for _ in range(key_len)),
                  tuple(rng.below(vocab) for _ in range(val_len))) for _ in range(1 + rng.below(4))]
    return model.with_params(params), batch


def check_model(arch: str, seed: int, h: float = 1e-5) -> float:
    model, batch = small_model_case(arch, seed)
    inputs = {k: v for k, v in model.params.items()}
    return _compare(inputs, lambda t: model.loss_tensor(t, batch), h)
