"""Forget-set saliency (mean squared gradients) and the empirical diagonal Fisher."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .models import Model, batches


@dataclass
class SaliencyMap:
    scores: dict[str, np.ndarray]
    n_samples: int

    def __getitem__(self, name):
        return self.scores[name]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, s in self.scores.items():
            h.update(name.encode())
            h.update(np.asarray(s.shape, dtype="<u8").tobytes())
            h.update(np.ascontiguousarray(s, dtype="<f8").tobytes())
        return h.hexdigest()

    def subset(self, names) -> SaliencyMap:
        return SaliencyMap({k: self.scores[k] for k in names}, self.n_samples)


def compute_saliency(model: Model, forget_set: Sequence, batch_size: int = 1) -> SaliencyMap:
    """Accumulate ``(|B| / |D_f|) * grad_B**2`` over consecutive batches.

    ``grad_B`` is the gradient of the mean loss on batch ``B``.  With
    ``batch_size=1`` this is exactly the per-sample mean of squared
    gradients; larger batches square averaged gradients instead, which is
    cheaper but generally smaller.
    """
    data = list(forget_set)
    if not data:
        raise ContractError("forget set is empty")
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    n = len(data)
    acc = {k: np.zeros_like(v) for k, v in model.params.items()}
    for b in batches(data, batch_size):
        _, grads = model.loss_and_grad(b)
        w = len(b) / n
        for k, g in grads.items():
            acc[k] += w * (g * g)
    return SaliencyMap(acc, n)


def fisher_diag(model: Model, dataset: Sequence) -> SaliencyMap:
    """Empirical diagonal Fisher: mean over samples of squared per-sample gradients
    of the negative log-likelihood."""
    data = list(dataset)
    if not data:
        raise ContractError("dataset is empty")
    n = len(data)
    acc = {k: np.zeros_like(v) for k, v in model.params.items()}
    for sample in data:
        _, grads = model.loss_and_grad([sample])
        for k, g in grads.items():
            acc[k] += (1.0 / n) * (g * g)
    return SaliencyMap(acc, n)
