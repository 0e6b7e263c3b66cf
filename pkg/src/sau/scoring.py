"""Forget-quality / utility score card."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .models import FactDataset, Model, exact_match


def harmonic(a: float, b: float) -> float:
    if a <= 0 or b <= 0:
        return 0.0
    lo, hi = sorted((a, b))  # fixed order keeps the result symmetric to the last bit
    return 2.0 * hi * (lo / (lo + hi))  # avoids underflow of a * b


@dataclass(frozen=True)
class ScoreCard:
    forget_quality: float  # 1 - EM on the forget split
    utility: float  # EM on the retain split
    aggregate: float

    @classmethod
    def from_em(cls, forget_em: float, retain_em: float) -> ScoreCard:
        fq = 1.0 - forget_em
        return cls(fq, retain_em, harmonic(fq, retain_em))

    def to_dict(self) -> dict:
        return asdict(self)


def score(model: Model, dataset: FactDataset) -> ScoreCard:
    return ScoreCard.from_em(exact_match(model, dataset.forget), exact_match(model, dataset.retain))
