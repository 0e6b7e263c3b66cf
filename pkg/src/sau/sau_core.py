"""Gradient mask, pruned importance, redistribution weights and the SAU gradient.

Per prunable layer with saliency ``S`` and keep-mask ``M``:

* ``G`` keeps the ``round(k * n_surviving)`` most salient surviving weights
  (exact rank selection; ties keep the lower flat index),
* ``I_pruned = sum(S[M == 0])``,
* ``W_i = 1 + alpha * S_i / sum(S[M == 1]) * I_pruned`` on survivors, 1 elsewhere,
* the transformed gradient is ``grad * G * W``.

Sums use ``math.fsum`` so they are correctly rounded and independent of
summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InvalidShapeError
from .models import round_half_up
from .pruning import SparsityMask
from .saliency import SaliencyMap


@dataclass(frozen=True)
class SAUConfig:
    topk: float = 0.3
    alpha: float = 0.1

    def __post_init__(self):
        if not 0 < self.topk <= 1:
            raise ContractError(f"topk must lie in (0, 1], got {self.topk}")
        if not self.alpha >= 0:
            raise ContractError(f"alpha must be >= 0, got {self.alpha}")


@dataclass
class SAUPlan:
    G: dict[str, np.ndarray]
    W: dict[str, np.ndarray]
    I_pruned: dict[str, float]
    tau: dict[str, float | None]
    config: SAUConfig
    mask_hash: str
    saliency_hash: str
    empty_layers: list[str] = field(default_factory=list)

    def names(self) -> list[str]:
        return list(self.G)


def _aligned(saliency: SaliencyMap, mask: SparsityMask):
    for name, m in mask.masks.items():
        if name not in saliency.scores:
            raise InvalidShapeError(f"saliency missing layer {name!r}")
        if saliency[name].shape != m.shape:
            raise InvalidShapeError(f"{name}: saliency {saliency[name].shape} vs mask {m.shape}")
        yield name, np.asarray(saliency[name], dtype=np.float64), m


def select_topk(s: np.ndarray, m: np.ndarray, k: float) -> tuple[np.ndarray, float | None]:
    """Gradient mask and threshold for one layer."""
    flat_s, flat_m = s.reshape(-1), m.reshape(-1)
    surv = np.flatnonzero(flat_m)
    g = np.zeros(flat_s.size, dtype=np.uint8)
    n_keep = round_half_up(k * surv.size)
    tau = None
    if n_keep:
        # descending saliency, ascending index on ties
        order = np.lexsort((surv, -flat_s[surv]))
        chosen = surv[order[:n_keep]]
        g[chosen] = 1
        tau = float(flat_s[chosen].min())
    return g.reshape(s.shape), tau


def build_gradient_mask(saliency: SaliencyMap, mask: SparsityMask, k: float):
    """Returns ``(G, tau, empty_layers)``; layers without survivors get all-zero G."""
    if not 0 < k <= 1:
        raise ContractError(f"topk must lie in (0, 1], got {k}")
    G, tau, empty = {}, {}, []
    for name, s, m in _aligned(saliency, mask):
        G[name], tau[name] = select_topk(s, m, k)
        if not np.any(m):
            empty.append(name)
    return G, tau, empty


def layer_pruned_importance(s: np.ndarray, m: np.ndarray) -> float:
    return math.fsum(s[m == 0].tolist())


def pruned_importance(saliency: SaliencyMap, mask: SparsityMask) -> dict[str, float]:
    return {name: layer_pruned_importance(s, m) for name, s, m in _aligned(saliency, mask)}


def layer_redistribution(s: np.ndarray, m: np.ndarray, alpha: float) -> np.ndarray:
    w = np.ones(s.shape, dtype=np.float64)
    keep = m != 0
    denom = math.fsum(s[keep].tolist())
    if denom == 0.0:
        return w
    ipruned = layer_pruned_importance(s, m)
    w[keep] = 1.0 + alpha * (s[keep] / denom) * ipruned
    return w


def build_redistribution(saliency: SaliencyMap, mask: SparsityMask, alpha: float) -> dict[str, np.ndarray]:
    if not alpha >= 0:
        raise ContractError("alpha must be >= 0")
    return {name: layer_redistribution(s, m, alpha) for name, s, m in _aligned(saliency, mask)}


def build_plan(saliency: SaliencyMap, mask: SparsityMask, config: SAUConfig = SAUConfig()) -> SAUPlan:
    G, tau, empty = build_gradient_mask(saliency, mask, config.topk)
    return SAUPlan(
        G=G,
        W=build_redistribution(saliency, mask, config.alpha),
        I_pruned=pruned_importance(saliency, mask),
        tau=tau,
        config=config,
        mask_hash=mask.content_hash(),
        saliency_hash=saliency.content_hash(),
        empty_layers=empty,
    )


def transform_gradient(grad: dict[str, np.ndarray], plan: SAUPlan) -> dict[str, np.ndarray]:
    """``grad * G * W`` on planned layers; other tensors pass through."""
    out = {}
    for name, g in grad.items():
        if name in plan.G:
            if g.shape != plan.G[name].shape:
                raise ContractError(f"{name}: gradient {g.shape} vs plan {plan.G[name].shape}")
            out[name] = g * plan.G[name] * plan.W[name]
        else:
            out[name] = g
    return out


def restrict_gradient(grad: dict[str, np.ndarray], mask: SparsityMask) -> dict[str, np.ndarray]:
    """Mask-only restriction ``grad * M`` of the sparsity baseline."""
    out = {}
    for name, g in grad.items():
        if name in mask.masks:
            if g.shape != mask[name].shape:
                raise ContractError(f"{name}: gradient {g.shape} vs mask {mask[name].shape}")
            out[name] = g * mask[name]
        else:
            out[name] = g
    return out
