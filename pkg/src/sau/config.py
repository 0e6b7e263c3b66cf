"""Flat JSON experiment configuration with field-level validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .models import ModelConfig
from .sau_core import SAUConfig
from .unlearner import VARIANTS, UnlearnConfig

PRUNERS = ("magnitude", "activation")


@dataclass
class ExperimentConfig:
    # task
    vocab: int = 64
    n_facts: int = 200
    key_len: int = 4
    val_len: int = 3
    forget_fraction: float = 0.10
    data_seed: int = 42
    # model
    arch: str = "char_lm"
    embed_dim: int = 32
    hidden: list = field(default_factory=lambda: [128, 128])
    model_seed: int = 42
    # pre-training
    train_lr: float = 0.1
    train_epochs: int = 40
    train_batch_size: int = 16
    train_seed: int = 42
    # pruning
    pruner: str = "magnitude"
    sparsity: float = 0.5
    calibration_size: int = 32
    # SAU
    topk: float = 0.3
    alpha: float = 0.1
    saliency_batch_size: int = 1
    # unlearning
    variant: str = "sau"
    lr: float = 1e-2
    retain_weight: float = 3.0
    epochs: int = 50
    forget_batch_size: int = 20
    retain_batch_size: int = 20
    seed: int = 42
    # sweeps
    sparsity_list: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75])
    variants: list = field(default_factory=lambda: ["baseline", "sau"])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    k_list: list = field(default_factory=lambda: [0.1, 0.3, 0.5])
    # output
    out_dir: str = "runs"
    record_timing: bool = False
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            want = f.type if isinstance(f.type, str) else f.type.__name__
            if want == "int":
                need(isinstance(v, int) and not isinstance(v, bool), f.name, "must be an integer")
            elif want == "float":
                need(isinstance(v, (int, float)) and not isinstance(v, bool), f.name, "must be a number")
            elif want == "bool":
                need(isinstance(v, bool), f.name, "must be a boolean")
            elif want == "str":
                need(isinstance(v, str), f.name, "must be a string")
            elif want == "list":
                need(isinstance(v, list), f.name, "must be a list")

        need(self.vocab >= 1, "vocab", "must be >= 1")
        need(self.n_facts >= 2, "n_facts", "must be >= 2")
        need(self.key_len >= 1, "key_len", "must be >= 1")
        need(self.val_len >= 1, "val_len", "must be >= 1")
        need(0 < self.forget_fraction < 1, "forget_fraction", "must lie in (0, 1)")
        need(self.vocab ** self.key_len >= self.n_facts, "n_facts", "exceeds the number of unique keys")
        need(self.arch in ("mlp", "char_lm"), "arch", "must be 'mlp' or 'char_lm'")
        need(self.embed_dim >= 1, "embed_dim", "must be >= 1")
        need(all(isinstance(h, int) and h >= 1 for h in self.hidden), "hidden", "widths must be integers >= 1")
        need(self.train_lr > 0, "train_lr", "must be > 0")
        need(self.train_epochs >= 0, "train_epochs", "must be >= 0")
        need(self.train_batch_size >= 1, "train_batch_size", "must be >= 1")
        need(self.pruner in PRUNERS, "pruner", f"must be one of {PRUNERS}")
        need(0 <= self.sparsity < 1, "sparsity", "must lie in [0, 1)")
        need(self.calibration_size >= 1, "calibration_size", "must be >= 1")
        need(0 < self.topk <= 1, "topk", "must lie in (0, 1]")
        need(self.alpha >= 0, "alpha", "must be >= 0")
        need(self.saliency_batch_size >= 1, "saliency_batch_size", "must be >= 1")
        need(self.variant in VARIANTS, "variant", f"must be one of {VARIANTS}")
        need(self.lr > 0, "lr", "must be > 0")
        need(self.retain_weight >= 0, "retain_weight", "must be >= 0")
        need(self.epochs >= 0, "epochs", "must be >= 0")
        need(self.forget_batch_size >= 1, "forget_batch_size", "must be >= 1")
        need(self.retain_batch_size >= 1, "retain_batch_size", "must be >= 1")
        need(len(self.sparsity_list) > 0 and all(isinstance(s, (int, float)) and 0 <= s < 1
                                                 for s in self.sparsity_list),
             "sparsity_list", "must be a nonempty list of values in [0, 1)")
        need(len(self.variants) > 0 and all(v in VARIANTS for v in self.variants),
             "variants", f"entries must be among {VARIANTS}")
        need(len(self.seeds) > 0 and all(isinstance(s, int) for s in self.seeds),
             "seeds", "must be a nonempty list of integers")
        need(len(self.k_list) > 0 and all(isinstance(k, (int, float)) and 0 < k <= 1 for k in self.k_list),
             "k_list", "entries must lie in (0, 1]")
        need(self.workers >= 1, "workers", "must be >= 1")

    # -- conversions -------------------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(arch=self.arch, vocab=self.vocab, key_len=self.key_len, val_len=self.val_len,
                           embed_dim=self.embed_dim, hidden=tuple(self.hidden), seed=self.model_seed)

    def sau_config(self, topk: float | None = None, alpha: float | None = None) -> SAUConfig:
        return SAUConfig(self.topk if topk is None else topk, self.alpha if alpha is None else alpha)

    def unlearn_config(self, variant: str | None = None, seed: int | None = None) -> UnlearnConfig:
        return UnlearnConfig(lr=self.lr, retain_weight=self.retain_weight, epochs=self.epochs,
                             forget_batch_size=self.forget_batch_size,
                             retain_batch_size=self.retain_batch_size,
                             seed=self.seed if seed is None else seed,
                             variant=self.variant if variant is None else variant)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown configuration key")
        try:
            return cls(**d)
        except TypeError as exc:  # pragma: no cover - guarded by the key check
            raise ConfigError("?", str(exc)) from exc

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top level must be an object")
        return cls.from_dict(data)


_JSON_TYPES = {"int": "integer", "float": "number", "bool": "boolean", "str": "string", "list": "array"}


def config_schema() -> dict:
    """JSON Schema (draft 2020-12) describing :class:`ExperimentConfig` files."""
    defaults = ExperimentConfig()
    props = {}
    for f in dataclasses.fields(ExperimentConfig):
        t = f.type if isinstance(f.type, str) else f.type.__name__
        props[f.name] = {"type": _JSON_TYPES[t], "default": getattr(defaults, f.name)}
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "ExperimentConfig",
        "type": "object",
        "additionalProperties": False,
        "properties": props,
    }
