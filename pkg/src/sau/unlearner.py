"""GradDiff unlearning on a sparse model with SAU or mask-only gradients."""

from __future__ import annotations

import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor_core as tc
from .errors import ContractError, HashMismatchError, UnlearningError
from .models import Fact, Model, ParamSet, exact_match
from .pruning import SparsityMask, sparsity_of
from .sau_core import SAUPlan, restrict_gradient, transform_gradient
from .scoring import ScoreCard

VARIANTS = ("sau", "baseline")


@dataclass(frozen=True)
class UnlearnConfig:
    lr: float = 1e-2
    retain_weight: float = 1.0
    epochs: int = 50
    forget_batch_size: int = 4
    retain_batch_size: int = 4
    seed: int = 42
    variant: str = "sau"

    def __post_init__(self):
        if not self.lr >= 0:
            raise ContractError("lr must be >= 0")
        if not self.retain_weight >= 0:
            raise ContractError("retain_weight must be >= 0")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if self.forget_batch_size < 1 or self.retain_batch_size < 1:
            raise ContractError("batch sizes must be >= 1")
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}")


METRIC_FIELDS = ("epoch", "forget_loss", "retain_loss", "forget_em", "retain_em")


@dataclass
class RunManifest:
    config: dict
    seed: int
    metrics: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    wall_clock_s: float | None = None
    hashes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> RunManifest:
        return cls(**json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(METRIC_FIELDS) + "\n")
        for row in self.metrics:
            buf.write(",".join(repr(row[k]) if k != "epoch" else str(row[k]) for k in METRIC_FIELDS) + "\n")
        return buf.getvalue()


def graddiff_step(model: Model, params: ParamSet, plan: SAUPlan | SparsityMask,
                  forget_batch: Sequence, retain_batch: Sequence,
                  retain_weight: float, lr: float, where: tuple[int, int] = (0, 0)) -> ParamSet:
    """One SGD step on ``-L(forget) + retain_weight * L(retain)``.

    The gradient is transformed by the SAU plan (``* G * W``) or, when a
    bare mask is passed, restricted to surviving weights (``* M``).
    """
    lf, gf = model.loss_and_grad(forget_batch, params)
    if not math.isfinite(lf):
        raise UnlearningError(where[0], where[1], lf)
    grad = {k: -g for k, g in gf.items()}
    if retain_weight != 0:
        lr_loss, gr = model.loss_and_grad(retain_batch, params)
        if not math.isfinite(lr_loss):
            raise UnlearningError(where[0], where[1], lr_loss)
        grad = {k: grad[k] + retain_weight * gr[k] for k in grad}
    if isinstance(plan, SAUPlan):
        grad = transform_gradient(grad, plan)
    else:
        grad = restrict_gradient(grad, plan)
    if lr == 0:
        return params
    return params.replace({k: params[k] - lr * g for k, g in grad.items()})


def _cycle(items: list, size: int, order: list[int]):
    """Endless consecutive batches over ``items`` in ``order``, wrapping around."""
    pos = 0
    n = len(items)
    while True:
        batch = []
        for _ in range(min(size, n)):
            batch.append(items[order[pos]])
            pos = (pos + 1) % n
        yield batch


def pruned_max_abs(params: ParamSet, mask: SparsityMask) -> float:
    worst = 0.0
    for name, m in mask.masks.items():
        dead = params[name][m == 0]
        if dead.size:
            worst = max(worst, float(np.max(np.abs(dead))))
    return worst


def _metrics(model: Model, params: ParamSet, forget, retain, epoch: int) -> dict:
    m = model.with_params(params)
    return {
        "epoch": epoch,
        "forget_loss": model.loss(forget, params),
        "retain_loss": model.loss(retain, params) if retain else 0.0,
        "forget_em": exact_match(m, forget),
        "retain_em": exact_match(m, retain) if retain else 1.0,
    }


def run_unlearning(model: Model, mask: SparsityMask, plan: SAUPlan | None,
                   forget_set: Sequence[Fact], retain_set: Sequence[Fact],
                   config: UnlearnConfig, record_timing: bool = False,
                   extra: dict | None = None,
                   on_epoch: Callable[[int, ParamSet], None] | None = None) -> tuple[ParamSet, RunManifest]:
    """Unlearning stage: ``epochs`` passes over the forget set.

    Each epoch has ``ceil(|D_f| / forget_batch_size)`` steps.  Forget and
    retain batches come from independent cyclic iterators over seeded
    permutations of each split; the retain cursor carries over between
    epochs.  Metrics are recorded before the first epoch and after each one;
    ``on_epoch(epoch, params)`` is called at the same points.
    """
    forget, retain = list(forget_set), list(retain_set)
    if not forget:
        raise ContractError("forget set is empty")
    if config.variant == "sau":
        if plan is None:
            raise ContractError("sau variant needs a plan")
        if plan.mask_hash != mask.content_hash():
            raise HashMismatchError("plan was built for a different sparsity mask")
        transform: SAUPlan | SparsityMask = plan
    else:
        transform = mask
    if config.retain_weight != 0 and not retain:
        raise ContractError("retain set is empty but retain_weight != 0")
    params = model.params
    if pruned_max_abs(params, mask) != 0.0:
        raise ContractError("model parameters do not satisfy theta = theta * M")

    start = time.perf_counter()
    rng = tc.Rng(config.seed)
    f_iter = _cycle(forget, config.forget_batch_size, rng.permutation(len(forget)))
    r_iter = _cycle(retain, config.retain_batch_size, rng.permutation(len(retain))) if retain else None
    steps = math.ceil(len(forget) / config.forget_batch_size)

    metrics = [_metrics(model, params, forget, retain, 0)]
    if on_epoch is not None:
        on_epoch(0, params)
    for epoch in range(1, config.epochs + 1):
        for b in range(steps):
            fb = next(f_iter)
            rb = next(r_iter) if r_iter is not None else []
            params = graddiff_step(model, params, transform, fb, rb,
                                   config.retain_weight, config.lr, where=(epoch, b))
        row = _metrics(model, params, forget, retain, epoch)
        row["pruned_max_abs"] = pruned_max_abs(params, mask)
        row["sparsity"] = sparsity_of(mask)
        metrics.append(row)
        if on_epoch is not None:
            on_epoch(epoch, params)
    metrics[0]["pruned_max_abs"] = pruned_max_abs(model.params, mask)
    metrics[0]["sparsity"] = sparsity_of(mask)

    last = metrics[-1]
    card = ScoreCard.from_em(last["forget_em"], last["retain_em"])
    cfg = asdict(config)
    if plan is not None and config.variant == "sau":
        cfg["topk"], cfg["alpha"] = plan.config.topk, plan.config.alpha
    cfg.update(extra or {})
    manifest = RunManifest(
        config=cfg,
        seed=config.seed,
        metrics=metrics,
        final=card.to_dict(),
        wall_clock_s=round(time.perf_counter() - start, 6) if record_timing else None,
        hashes={
            "initial_params": model.params.content_hash(),
            "final_params": params.content_hash(),
            "mask": mask.content_hash(),
            "plan_saliency": plan.saliency_hash if plan is not None else None,
        },
    )
    return params, manifest
