"""One-shot unstructured pruning with per-layer sparsity."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, InvalidShapeError
from .models import Model, ParamSet


@dataclass
class SparsityMask:
    """Binary keep-mask (uint8) for each prunable weight matrix."""

    masks: dict[str, np.ndarray]
    target: float = 0.0

    def __getitem__(self, name):
        return self.masks[name]

    def names(self) -> list[str]:
        return list(self.masks)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, m in self.masks.items():
            h.update(name.encode())
            h.update(np.asarray(m.shape, dtype="<u8").tobytes())
            h.update(np.ascontiguousarray(m, dtype=np.uint8).tobytes())
        return h.hexdigest()

    @classmethod
    def dense(cls, params: ParamSet) -> SparsityMask:
        return cls({k: np.ones(params[k].shape, dtype=np.uint8) for k in params.prunable_names()}, 0.0)


def _check_s(s: float):
    if not 0 <= s < 1:
        raise ContractError(f"sparsity must lie in [0, 1), got {s}")


def _prune_lowest(scores: np.ndarray, s: float) -> np.ndarray:
    """Zero the floor(s*n) lowest scores; among ties the lower flat index goes first."""
    flat = scores.reshape(-1)
    n_prune = math.floor(s * flat.size)
    keep = np.ones(flat.size, dtype=np.uint8)
    if n_prune:
        order = np.argsort(flat, kind="stable")
        keep[order[:n_prune]] = 0
    return keep.reshape(scores.shape)


def magnitude_prune(params: ParamSet, s: float) -> SparsityMask:
    _check_s(s)
    return SparsityMask({k: _prune_lowest(np.abs(params[k]), s) for k in params.prunable_names()}, s)


def activation_prune(model: Model, calibration: Sequence, s: float) -> SparsityMask:
    """Wanda-style scores ``|W_ij| * rms_batch(x_j)`` pruned per layer."""
    _check_s(s)
    if len(calibration) == 0:
        raise ContractError("calibration batch is empty")
    acts = model.layer_inputs(list(calibration))
    masks = {}
    for name in model.params.prunable_names():
        w = model.params[name]
        rms = np.sqrt(np.mean(acts[name] ** 2, axis=0))
        masks[name] = _prune_lowest(np.abs(w) * rms[None, :], s)
    return SparsityMask(masks, s)


def apply_mask(params: ParamSet, mask: SparsityMask) -> ParamSet:
    """``theta * M`` on prunable tensors; everything else is left alone."""
    if set(mask.masks) != set(params.prunable_names()):
        raise ContractError("mask must cover exactly the prunable tensors")
    out = {}
    for name in params.prunable_names():
        m = mask[name]
        if m.shape != params[name].shape:
            raise ContractError(f"{name}: mask shape {m.shape} != weight shape {params[name].shape}")
        out[name] = params[name] * m
    return params.replace(out)


def sparsity_of(mask: SparsityMask) -> float:
    total = sum(m.size for m in mask.masks.values())
    kept = sum(int(np.count_nonzero(m)) for m in mask.masks.values())
    return (total - kept) / total if total else 0.0


def prune(model: Model, pruner: str, s: float, calibration: Sequence | None = None) -> SparsityMask:
    if pruner == "magnitude":
        return magnitude_prune(model.params, s)
    if pruner in ("activation", "wanda"):
        return activation_prune(model, calibration or [], s)
    raise ContractError(f"unknown pruner {pruner!r}")


def validate_mask(params: ParamSet, mask: SparsityMask) -> None:
    for name in params.prunable_names():
        if name not in mask.masks or mask[name].shape != params[name].shape:
            raise InvalidShapeError(f"mask does not match tensor {name!r}")
