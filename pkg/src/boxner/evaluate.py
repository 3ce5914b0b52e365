"""Exact-match entity scoring with per-type and micro-averaged P/R/F1.

A prediction is correct iff its (span, label) exactly matches a gold entity;
each gold entity can be consumed at most once, so duplicate predictions of
the same entity earn credit only once.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .corpus import Document

__all__ = ["TypeMetrics", "Metrics", "evaluate"]


def _prf(predicted: int, gold: int, correct: int) -> tuple[float, float, float]:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class TypeMetrics:
    gold: int = 0
    predicted: int = 0
    correct: int = 0

    @property
    def precision(self) -> float:
        return _prf(self.predicted, self.gold, self.correct)[0]

    @property
    def recall(self) -> float:
        return _prf(self.predicted, self.gold, self.correct)[1]

    @property
    def f1(self) -> float:
        return _prf(self.predicted, self.gold, self.correct)[2]


@dataclass
class Metrics:
    per_type: dict[str, TypeMetrics] = field(default_factory=dict)

    @property
    def totals(self) -> TypeMetrics:
        t = TypeMetrics()
        for m in self.per_type.values():
            t.gold += m.gold
            t.predicted += m.predicted
            t.correct += m.correct
        return t

    @property
    def precision(self) -> float:
        return self.totals.precision

    @property
    def recall(self) -> float:
        return self.totals.recall

    @property
    def f1(self) -> float:
        return self.totals.f1

    def table(self) -> str:
        lines = [f"{'TYPE':<10}{'P':>8}{'R':>8}{'F':>8}{'gold':>7}{'pred':>7}"]
        for label in sorted(self.per_type):
            m = self.per_type[label]
            lines.append(f"{label:<10}{m.precision:8.4f}{m.recall:8.4f}{m.f1:8.4f}"
                         f"{m.gold:7d}{m.predicted:7d}")
        t = self.totals
        lines.append(f"{'Total':<10}{t.precision:8.4f}{t.recall:8.4f}{t.f1:8.4f}"
                     f"{t.gold:7d}{t.predicted:7d}")
        return "\n".join(lines)


def evaluate(predictions: dict[str, list[tuple[int, int, str, float]]],
             gold: list[Document]) -> Metrics:
    """Score predictions (sentence id -> (start, length, label, conf) list)
    against gold documents."""
    gold_ids = {doc.id for doc in gold}
    unknown = set(predictions) - gold_ids
    if unknown:
        raise ValueError(f"predictions reference unknown sentence ids: {sorted(unknown)[:5]}")
    metrics = Metrics()

    def bucket(label: str) -> TypeMetrics:
        return metrics.per_type.setdefault(label, TypeMetrics())

    for doc in gold:
        remaining = Counter((e.start, e.length, e.label) for e in doc.entities)
        for e in doc.entities:
            bucket(e.label).gold += 1
        preds = sorted(predictions.get(doc.id, []), key=lambda p: -p[3])
        for s, n, label, _conf in preds:
            bucket(label).predicted += 1
            key = (s, n, label)
            if remaining[key] > 0:
                remaining[key] -= 1
                bucket(label).correct += 1
    return metrics
