"""Toy models and the synthetic fact-memorization task.

Two architectures share one interface (``loss_and_grad``, ``loss``,
``predict``, ``layer_inputs``):

* :class:`MLPClassifier` -- dense ReLU network.  On facts it reads the
  one-hot prompt and predicts every answer token with its own output head;
  on generic ``(features, label)`` samples it is a plain classifier.
* :class:`CharLM` -- feed-forward next-token model over a fixed,
  concatenated context window (token embedding -> dense+ReLU blocks -> head).

Weights are stored ``(out_features, in_features)``.  Rank-2 weight matrices
are prunable; biases and the embedding table are not.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import tensor_core as tc
from .errors import ContractError, GenerationError, InvalidInputError, InvalidShapeError, TrainingError


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


class ParamSet:
    """Ordered name -> float64 array map with a per-tensor prunable flag."""

    def __init__(self, tensors: dict[str, np.ndarray], prunable: dict[str, bool]):
        if set(tensors) != set(prunable):
            raise ContractError("prunable flags must cover exactly the tensor names")
        for name, flag in prunable.items():
            if flag and np.asarray(tensors[name]).ndim != 2:
                raise ContractError(f"prunable tensor {name!r} must be rank 2")
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
        self.prunable = {k: bool(prunable[k]) for k in self.tensors}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def prunable_names(self) -> list[str]:
        return [k for k in self.tensors if self.prunable[k]]

    def copy(self) -> ParamSet:
        return ParamSet({k: v.copy() for k, v in self.tensors.items()}, dict(self.prunable))

    def replace(self, tensors: dict[str, np.ndarray]) -> ParamSet:
        """New ParamSet with some tensors swapped; flags are kept."""
        merged = dict(self.tensors)
        for k, v in tensors.items():
            if k not in merged:
                raise KeyError(k)
            if np.shape(v) != merged[k].shape:
                raise InvalidShapeError(f"{k}: shape {np.shape(v)} != {merged[k].shape}")
            merged[k] = v
        return ParamSet(merged, dict(self.prunable))

    def leaves(self) -> dict[str, tc.Tensor]:
        return {k: tc.Tensor(v, requires_grad=True) for k, v in self.tensors.items()}

    def num_params(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, v in self.tensors.items():
            h.update(name.encode())
            h.update(b"\x01" if self.prunable[name] else b"\x00")
            h.update(np.asarray(v.shape, dtype="<u8").tobytes())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    def bitwise_equal(self, other: ParamSet) -> bool:
        if self.names() != other.names():
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors.values(), other.tensors.values())
        )


# ---------------------------------------------------------------------------
# data

@dataclass(frozen=True)
class Fact:
    prompt: tuple[int, ...]
    answer: tuple[int, ...]


@dataclass
class FactDataset:
    facts: list[Fact]
    vocab: int
    forget_ids: tuple[int, ...]
    retain_ids: tuple[int, ...]

    def __post_init__(self):
        f, r = set(self.forget_ids), set(self.retain_ids)
        if f & r:
            raise ContractError("forget and retain ids overlap")
        if f | r != set(range(len(self.facts))):
            raise ContractError("forget and retain ids must cover every fact")
        for fact in self.facts:
            if any(t < 0 or t >= self.vocab for t in fact.prompt + fact.answer):
                raise ContractError(f"token outside vocab {self.vocab}: {fact}")

    @property
    def forget(self) -> list[Fact]:
        return [self.facts[i] for i in self.forget_ids]

    @property
    def retain(self) -> list[Fact]:
        return [self.facts[i] for i in self.retain_ids]

    @property
    def key_len(self) -> int:
        return len(self.facts[0].prompt) if self.facts else 0

    @property
    def val_len(self) -> int:
        return len(self.facts[0].answer) if self.facts else 0

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def to_text(self) -> str:
        head = "vocab={} forget={} retain={}".format(
            self.vocab,
            ",".join(map(str, self.forget_ids)),
            ",".join(map(str, self.retain_ids)),
        )
        lines = [head]
        for f in self.facts:
            lines.append(" ".join(map(str, f.prompt)) + " | " + " ".join(map(str, f.answer)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> FactDataset:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise InvalidInputError("empty dataset file")
        header = dict(part.split("=", 1) for part in lines[0].split())
        try:
            vocab = int(header["vocab"])
            forget = tuple(int(x) for x in header["forget"].split(",") if x)
            retain = tuple(int(x) for x in header["retain"].split(",") if x)
        except (KeyError, ValueError) as exc:
            raise InvalidInputError(f"bad dataset header: {lines[0]!r}") from exc
        facts = []
        for ln in lines[1:]:
            if "|" not in ln:
                raise InvalidInputError(f"fact line without '|': {ln!r}")
            p, a = ln.split("|", 1)
            facts.append(Fact(tuple(int(x) for x in p.split()), tuple(int(x) for x in a.split())))
        return cls(facts, vocab, forget, retain)

    def save(self, path) -> None:
        from .checkpoint import atomic_write_bytes
        atomic_write_bytes(path, self.to_text().encode("utf-8"))

    @classmethod
    def load(cls, path) -> FactDataset:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def gen_facts(n_facts: int = 200, vocab: int = 64, key_len: int = 4, val_len: int = 3,
              forget_fraction: float = 0.10, seed: int = 0) -> FactDataset:
    """Random key -> value facts with unique keys and a forget/retain split.

    ``round(forget_fraction * n_facts)`` (half-up) facts are chosen for the
    forget split by a seeded shuffle.
    """
    if not 0 < forget_fraction < 1:
        raise ContractError("forget_fraction must lie in (0, 1)")
    if n_facts < 2:
        raise ContractError("n_facts must be >= 2")
    if vocab < 1 or key_len < 1 or val_len < 1:
        raise ContractError("vocab, key_len and val_len must be >= 1")
    if vocab ** key_len < n_facts:
        raise GenerationError(
            f"vocab {vocab} with key_len {key_len} allows only {vocab ** key_len} unique keys"
        )
    rng = tc.Rng(seed)
    seen: set[tuple[int, ...]] = set()
    facts = []
    attempts = 0
    while len(facts) < n_facts:
        attempts += 1
        if attempts > 100 * n_facts + 1000:
            raise GenerationError("could not draw enough unique keys")
        key = tuple(rng.below(vocab) for _ in range(key_len))
        if key in seen:
            continue
        seen.add(key)
        facts.append(Fact(key, tuple(rng.below(vocab) for _ in range(val_len))))
    n_forget = round_half_up(forget_fraction * n_facts)
    n_forget = min(max(n_forget, 1), n_facts - 1)
    perm = rng.permutation(n_facts)
    forget = tuple(sorted(perm[:n_forget]))
    retain = tuple(sorted(perm[n_forget:]))
    return FactDataset(facts, vocab, forget, retain)


# ---------------------------------------------------------------------------
# models

@dataclass
class ModelConfig:
    arch: str = "char_lm"
    vocab: int = 64
    key_len: int = 4
    val_len: int = 3
    embed_dim: int = 32
    hidden: tuple[int, ...] = (128, 128)
    context_len: int | None = None
    seed: int = 0
    input_dim: int | None = None  # mlp on generic feature vectors
    n_classes: int | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.arch not in ("mlp", "char_lm"):
            raise ContractError(f"unknown arch {self.arch!r}")
        if any(h < 1 for h in self.hidden) or self.embed_dim < 1 or self.vocab < 1:
            raise ContractError("layer widths must be >= 1")
        if self.context_len is None:
            self.context_len = self.key_len + self.val_len - 1
        if self.arch == "char_lm" and self.context_len < self.key_len + self.val_len - 1:
            raise ContractError("context_len must cover prompt plus all but the last answer token")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


def _dense_init(rng: tc.Rng, out_f: int, in_f: int) -> np.ndarray:
    return tc.randn([out_f, in_f], rng, stddev=math.sqrt(2.0 / in_f)).data


class Model:
    """Shared machinery; subclasses implement ``_loss_tensor`` and friends."""

    config: ModelConfig
    params: ParamSet

    def with_params(self, params: ParamSet):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = params
        return clone

    def loss_tensor(self, tensors: dict[str, tc.Tensor], batch) -> tc.Tensor:
        raise NotImplementedError

    def loss(self, batch, params: ParamSet | None = None) -> float:
        params = self.params if params is None else params
        tensors = {k: tc.Tensor(v) for k, v in params.items()}
        return float(self.loss_tensor(tensors, batch).data)

    def loss_and_grad(self, batch, params: ParamSet | None = None) -> tuple[float, dict[str, np.ndarray]]:
        params = self.params if params is None else params
        leaves = params.leaves()
        loss = self.loss_tensor(leaves, batch)
        return float(loss.data), tc.backward(loss, leaves)


class MLPClassifier(Model):
    """ReLU MLP.  Layers are named ``fc0``, ``fc1``, ...; the last is the output."""

    def __init__(self, config: ModelConfig, params: ParamSet | None = None):
        self.config = config
        if config.input_dim is not None:
            self.in_dim = config.input_dim
            self.heads = 1
            self.classes = config.n_classes or 2
        else:
            self.in_dim = config.key_len * config.vocab
            self.heads = config.val_len
            self.classes = config.vocab
        self.widths = [self.in_dim, *config.hidden, self.heads * self.classes]
        self.n_layers = len(self.widths) - 1
        self.params = params if params is not None else self._init()

    def _init(self) -> ParamSet:
        rng = tc.Rng(self.config.seed)
        t, p = {}, {}
        for i in range(self.n_layers):
            t[f"fc{i}.weight"] = _dense_init(rng, self.widths[i + 1], self.widths[i])
            t[f"fc{i}.bias"] = np.zeros(self.widths[i + 1])
            p[f"fc{i}.weight"], p[f"fc{i}.bias"] = True, False
        return ParamSet(t, p)

    def encode(self, batch) -> tuple[np.ndarray, np.ndarray]:
        if len(batch) == 0:
            raise ContractError("empty batch")
        if isinstance(batch[0], Fact):
            k, v = self.config.key_len, self.config.vocab
            x = np.zeros((len(batch), k * v))
            y = np.zeros((len(batch), self.heads), dtype=np.int64)
            for n, f in enumerate(batch):
                if len(f.prompt) != k or len(f.answer) != self.heads:
                    raise InvalidInputError(f"fact shape does not match model: {f}")
                if any(t >= v for t in f.prompt + f.answer):
                    raise InvalidInputError(f"token outside vocab {v}")
                x[n, np.arange(k) * v + np.asarray(f.prompt)] = 1.0
                y[n] = f.answer
            return x, y
        x = np.array([np.asarray(s[0], dtype=np.float64).reshape(-1) for s in batch])
        y = np.array([[int(s[1])] for s in batch], dtype=np.int64)
        if x.shape[1] != self.in_dim:
            raise InvalidInputError(f"feature width {x.shape[1]} != {self.in_dim}")
        return x, y

    def _forward(self, tensors, x: np.ndarray, record=None) -> tc.Tensor:
        h = tc.Tensor(x)
        for i in range(self.n_layers):
            if record is not None:
                record[f"fc{i}.weight"] = h.data
            h = tc.linear(h, tensors[f"fc{i}.weight"], tensors[f"fc{i}.bias"])
            if i < self.n_layers - 1:
                h = tc.relu(h)
        return h

    def logits(self, tensors, batch) -> tc.Tensor:
        """Logits of shape (len(batch) * heads, classes)."""
        x, _ = self.encode(batch)
        out = self._forward(tensors, x)
        return tc.reshape(out, (x.shape[0] * self.heads, self.classes))

    def loss_tensor(self, tensors, batch) -> tc.Tensor:
        x, y = self.encode(batch)
        out = tc.reshape(self._forward(tensors, x), (x.shape[0] * self.heads, self.classes))
        return tc.softmax_cross_entropy(out, y.reshape(-1))

    def predict(self, batch) -> np.ndarray:
        tensors = {k: tc.Tensor(v) for k, v in self.params.items()}
        x, _ = self.encode(batch)
        out = self._forward(tensors, x).data.reshape(len(batch), self.heads, self.classes)
        return out.argmax(axis=-1)

    def layer_inputs(self, batch) -> dict[str, np.ndarray]:
        tensors = {k: tc.Tensor(v) for k, v in self.params.items()}
        x, _ = self.encode(batch)
        rec: dict[str, np.ndarray] = {}
        self._forward(tensors, x, record=rec)
        return rec


class CharLM(Model):
    """Next-token predictor over a right-padded window of previous tokens.

    The embedding table has ``vocab + 1`` rows; the last row is the padding
    token and never appears as a target.
    """

    def __init__(self, config: ModelConfig, params: ParamSet | None = None):
        self.config = config
        self.pad = config.vocab
        self.ctx = config.context_len
        self.params = params if params is not None else self._init()

    def _init(self) -> ParamSet:
        c = self.config
        rng = tc.Rng(c.seed)
        t: dict[str, np.ndarray] = {"embed": tc.randn([c.vocab + 1, c.embed_dim], rng).data}
        p = {"embed": False}
        widths = [self.ctx * c.embed_dim, *c.hidden]
        for i in range(len(c.hidden)):
            t[f"fc{i}.weight"] = _dense_init(rng, widths[i + 1], widths[i])
            t[f"fc{i}.bias"] = np.zeros(widths[i + 1])
            p[f"fc{i}.weight"], p[f"fc{i}.bias"] = True, False
        t["head.weight"] = np.zeros((c.vocab, widths[-1]))
        t["head.bias"] = np.zeros(c.vocab)
        p["head.weight"], p["head.bias"] = True, False
        return ParamSet(t, p)

    def _window(self, tokens: Sequence[int]) -> list[int]:
        if len(tokens) > self.ctx:
            raise InvalidInputError(f"sequence of length {len(tokens)} exceeds context {self.ctx}")
        return list(tokens) + [self.pad] * (self.ctx - len(tokens))

    def encode(self, batch, include_prompt: bool = False):
        """Contexts, targets and per-row loss weights for a list of facts.

        Rows predict answer token ``j`` from ``prompt + answer[:j]``.  With
        ``include_prompt`` the prompt positions are also emitted, with weight 0.
        """
        if len(batch) == 0:
            raise ContractError("empty batch")
        v = self.config.vocab
        ctxs, tgts, wts = [], [], []
        for f in batch:
            seq = list(f.prompt) + list(f.answer)
            if any(t < 0 or t >= v for t in seq):
                raise InvalidInputError(f"token outside vocab {v}")
            if len(seq) - 1 > self.ctx:
                raise InvalidInputError(f"fact of length {len(seq)} exceeds context {self.ctx}")
            start = 1 if include_prompt else len(f.prompt)
            for j in range(start, len(seq)):
                ctxs.append(self._window(seq[:j]))
                tgts.append(seq[j])
                wts.append(1.0 if j >= len(f.prompt) else 0.0)
        return np.array(ctxs, dtype=np.int64), np.array(tgts, dtype=np.int64), np.array(wts)

    def _forward(self, tensors, contexts: np.ndarray, record=None) -> tc.Tensor:
        n = contexts.shape[0]
        h = tc.reshape(tc.embed(tensors["embed"], contexts), (n, self.ctx * self.config.embed_dim))
        for i in range(len(self.config.hidden)):
            if record is not None:
                record[f"fc{i}.weight"] = h.data
            h = tc.relu(tc.linear(h, tensors[f"fc{i}.weight"], tensors[f"fc{i}.bias"]))
        if record is not None:
            record["head.weight"] = h.data
        return tc.linear(h, tensors["head.weight"], tensors["head.bias"])

    def logits(self, tensors, batch) -> tc.Tensor:
        ctx, _, _ = self.encode(batch)
        return self._forward(tensors, ctx)

    def loss_tensor(self, tensors, batch, targets=None, include_prompt: bool = False) -> tc.Tensor:
        ctx, tgt, w = self.encode(batch, include_prompt=include_prompt)
        if targets is not None:
            tgt = np.asarray(targets, dtype=np.int64)
        return tc.softmax_cross_entropy(self._forward(tensors, ctx), tgt, w)

    def predict(self, batch) -> np.ndarray:
        """Greedy decoding of every answer token (argmax, ties to lowest id)."""
        tensors = {k: tc.Tensor(v) for k, v in self.params.items()}
        seqs = [list(f.prompt) for f in batch]
        n_ans = self.config.val_len
        out = np.zeros((len(batch), n_ans), dtype=np.int64)
        for j in range(n_ans):
            ctx = np.array([self._window(s) for s in seqs], dtype=np.int64)
            pred = self._forward(tensors, ctx).data.argmax(axis=-1)
            out[:, j] = pred
            for s, p in zip(seqs, pred):
                s.append(int(p))
        return out

    def layer_inputs(self, batch) -> dict[str, np.ndarray]:
        tensors = {k: tc.Tensor(v) for k, v in self.params.items()}
        ctx, _, _ = self.encode(batch)
        rec: dict[str, np.ndarray] = {}
        self._forward(tensors, ctx, record=rec)
        return rec


def build_model(config: ModelConfig, params: ParamSet | None = None) -> Model:
    if config.arch == "mlp":
        return MLPClassifier(config, params)
    return CharLM(config, params)


def forward(model: Model, batch) -> np.ndarray:
    tensors = {k: tc.Tensor(v) for k, v in model.params.items()}
    return model.logits(tensors, batch).data


def loss(model: Model, batch) -> float:
    return model.loss(batch)


# ---------------------------------------------------------------------------
# training and evaluation

@dataclass
class TrainResult:
    params: ParamSet
    losses: list[float] = field(default_factory=list)  # full-data loss, epoch 0 = initial


def batches(items: Sequence, size: int) -> list[list]:
    return [list(items[i:i + size]) for i in range(0, len(items), size)]


def train(model: Model, dataset: FactDataset | Sequence, lr: float, epochs: int,
          batch_size: int = 16, seed: int = 0) -> TrainResult:
    """Plain minibatch SGD on every fact (both splits).

    Each epoch visits the data in an order drawn from ``Rng(seed)``.
    """
    if not lr >= 0:
        raise ContractError("lr must be >= 0")
    if epochs < 0 or batch_size < 1:
        raise ContractError("epochs must be >= 0 and batch_size >= 1")
    data = list(dataset.facts) if isinstance(dataset, FactDataset) else list(dataset)
    rng = tc.Rng(seed)
    params = model.params.copy()
    losses = [model.loss(data, params)]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(data))
        for b in batches([data[i] for i in order], batch_size):
            value, grads = model.loss_and_grad(b, params)
            if not math.isfinite(value):
                raise TrainingError(epoch, value)
            if lr == 0:
                continue
            params = params.replace({k: params[k] - lr * g for k, g in grads.items()})
        full = model.loss(data, params)
        if not math.isfinite(full):
            raise TrainingError(epoch, full)
        losses.append(full)
    return TrainResult(params, losses)


def exact_match(model: Model, facts: Sequence[Fact]) -> float:
    """Fraction of facts whose whole answer is reproduced by greedy decoding.

    An empty subset is vacuously 1.0 and triggers a ``RuntimeWarning``.
    """
    if len(facts) == 0:
        warnings.warn("exact_match on an empty subset is defined as 1.0", RuntimeWarning)
        return 1.0
    pred = model.predict(list(facts))
    gold = np.array([f.answer for f in facts], dtype=np.int64)
    return float(np.all(pred == gold, axis=1).mean())
