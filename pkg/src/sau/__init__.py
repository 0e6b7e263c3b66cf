"""Sparsity-aware unlearning (SAU) for pruned models, at desk scale.

Modules, bottom up: ``tensor_core`` (reverse-mode autodiff over numpy),
``models`` (fact task, MLP and char-level LM), ``pruning``, ``saliency``,
``sau_core`` (gradient mask and redistribution), ``unlearner`` (GradDiff),
``theory`` (numerical checks of the KL/Fisher results), ``eval_harness``
(sweeps and ablations), ``checkpoint``/``config``/``cli`` (plumbing).
"""

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    HashMismatchError,
    SAUError,
)
from .models import FactDataset, ModelConfig, ParamSet, build_model, gen_facts, train
from .pruning import SparsityMask, apply_mask, prune, sparsity_of
from .saliency import SaliencyMap, compute_saliency, fisher_diag
from .sau_core import SAUConfig, SAUPlan, build_plan, transform_gradient
from .scoring import ScoreCard, score
from .unlearner import RunManifest, UnlearnConfig, run_unlearning

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "ContractError", "HashMismatchError", "SAUError",
    "FactDataset", "ModelConfig", "ParamSet", "build_model", "gen_facts", "train",
    "SparsityMask", "apply_mask", "prune", "sparsity_of",
    "SaliencyMap", "compute_saliency", "fisher_diag",
    "SAUConfig", "SAUPlan", "build_plan", "transform_gradient",
    "ScoreCard", "score", "RunManifest", "UnlearnConfig", "run_unlearning",
]
