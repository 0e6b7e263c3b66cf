"""Dense float64 tensors with tape-based reverse-mode autodiff.

Only what the two toy models and the theory toys need is provided:
matmul, add (with leading-batch broadcast), mul, relu, embedding lookup,
reshape/transpose, reductions and a stable softmax cross-entropy.

Randomness comes from :class:`Rng`, a xorshift64* generator whose state
transition is fixed here so that seeds reproduce bit-for-bit::

    x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27      (mod 2**64)
    output = x * 0x2545F4914F6CDD1D                 (mod 2**64)

The state is seeded through one round of splitmix64 so that small seeds
(0, 1, 2, ...) do not start in low-entropy states.  Uniforms take the top
53 bits of an output; normals come from Box-Muller on two consecutive
uniforms, emitting the cosine branch then the sine branch.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError, InvalidShapeError

_MASK64 = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """xorshift64* generator; see module docstring for the exact recurrence."""

    def __init__(self, seed: int):
        state = splitmix64(int(seed) & _MASK64)
        self.state = state if state != 0 else 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * _MULT) & _MASK64

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def below(self, n: int) -> int:
        """Integer in [0, n) by multiply-shift (no rejection step)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def normals(self, count: int) -> list[float]:
        out: list[float] = []
        while len(out) < count:
            u1 = 1.0 - self.uniform()  # (0, 1]
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            out.append(r * math.cos(2.0 * math.pi * u2))
            out.append(r * math.sin(2.0 * math.pi * u2))
        return out[:count]

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n), swapping from the back."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


_order = itertools.count()


class Tensor:
    """A float64 array plus the bookkeeping needed to backpropagate through it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_order")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._order = next(_order)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d < 1 for d in shape):
        raise InvalidShapeError(f"shape must be nonempty with all dims >= 1, got {shape}")
    return shape


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape)), requires_grad=requires_grad)


def randn(shape: Sequence[int], seed: int | Rng, stddev: float = 1.0,
          requires_grad: bool = False) -> Tensor:
    """Normal(0, stddev**2) samples in row-major order from :class:`Rng`."""
    shape = _check_shape(shape)
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    n = math.prod(shape)
    values = np.array(rng.normals(n), dtype=np.float64) * stddev
    return Tensor(values.reshape(shape), requires_grad=requires_grad)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# operations

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidShapeError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _node(ad @ bd, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; one operand may omit the leading batch dimension."""
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g))
    if a.data.ndim >= 1 and a.shape[1:] == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    if b.data.ndim >= 1 and b.shape[1:] == a.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g.sum(axis=0), g))
    raise InvalidShapeError(f"add shapes incompatible: {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise InvalidShapeError(f"mul needs equal shapes: {a.shape} * {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def embed(table: Tensor, indices) -> Tensor:
    """Row lookup: output shape is ``indices.shape + (table.shape[1],)``."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2:
        raise InvalidShapeError(f"embedding table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range [0, {table.shape[0]})")
    rows = table.shape[0]

    def backward(g):
        out = np.zeros((rows, g.shape[-1]))
        np.add.at(out, idx.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (out,)

    return _node(table.data[idx], (table,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise InvalidShapeError(str(exc)) from None
    return _node(data, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise InvalidShapeError("transpose expects a 2-D tensor")
    return _node(a.data.T, (a,), lambda g: (g.T,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out_features, in_features)."""
    y = matmul(x, transpose(weight))
    return add(y, bias) if bias is not None else y


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, target, weights=None) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over the batch.

    ``weights`` (optional, per row) turns the mean into a weighted mean;
    rows with weight 0 do not influence the value or the gradient.
    """
    x = logits.data
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2:
        raise InvalidShapeError(f"logits must be 1-D or 2-D, got {logits.shape}")
    n, c = x.shape
    t = np.asarray(target, dtype=np.int64).reshape(-1)
    if t.shape[0] != n:
        raise InvalidShapeError(f"{t.shape[0]} targets for {n} rows")
    if t.size and (t.min() < 0 or t.max() >= c):
        raise IndexError(f"target out of range [0, {c})")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(n)
    total = w.sum()
    if total <= 0:
        raise ContractError("cross-entropy needs positive total weight")
    logp = log_softmax_np(x)
    rows = np.arange(n)
    value = -(w * logp[rows, t]).sum() / total

    def backward(g):
        grad = np.exp(logp)
        grad[rows, t] -= 1.0
        grad *= (w / total)[:, None] * float(g)
        return (grad[0] if single else grad,)

    return _node(np.array(value), (logits,), backward)


# ---------------------------------------------------------------------------
# differentiation

def backward(loss: Tensor, leaves: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Every node is visited once, in reverse creation order, and gradients are
    accumulated in the order the ops were recorded.  Returns the gradient of
    each requested leaf (zeros for leaves the loss does not depend on); the
    ``grad`` attribute of every reached ``requires_grad`` tensor is also set.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes or not t.requires_grad:
            continue
        nodes[id(t)] = t
        stack.extend(t._parents)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in sorted(nodes.values(), key=lambda n: n._order, reverse=True):
        g = grads.get(id(t))
        if g is None:
            continue
        t.grad = g
        if t._backward is None:
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg

    if leaves is None:
        return {}
    out = {}
    for name, leaf in leaves.items():
        g = grads.get(id(leaf))
        out[name] = np.zeros_like(leaf.data) if g is None else np.array(g, dtype=np.float64)
    return out


def finite_diff_grad(f: Callable[[dict[str, np.ndarray]], float],
                     params: Mapping[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` per coordinate."""
    if not h > 0:
        raise ContractError("finite difference step h must be > 0")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    out = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(work))
            flat[i] = orig - h
            fm = float(f(work))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out


def relative_error(a, b, floor: float = 1e-12) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)`` in the 2-norm over all entries."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / scale
