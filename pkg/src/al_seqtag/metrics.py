"""Span-level precision/recall/F1 and aggregation of repeated AL runs."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .corpus import extract_spans


class AlignmentError(ValueError):
    pass


class AggregationError(ValueError):
    pass


def _prf(correct: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = correct / n_pred if n_pred else 0.0
    r = correct / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class TypeScores:
    precision: float
    recall: float
    f1: float
    gold_count: int
    pred_count: int
    correct_count: int


@dataclass
class F1Report:
    precision: float
    recall: float
    f1: float
    per_type: dict[str, TypeScores] = field(default_factory=dict)

    @property
    def gold_count(self) -> int:
        return sum(t.gold_count for t in self.per_type.values())

    @property
    def pred_count(self) -> int:
        return sum(t.pred_count for t in self.per_type.values())

    @property
    def correct_count(self) -> int:
        return sum(t.correct_count for t in self.per_type.values())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "F1Report":
        per_type = {k: TypeScores(**v) for k, v in d.get("per_type", {}).items()}
        return cls(d["precision"], d["recall"], d["f1"], per_type)


def span_f1(predicted: Sequence[Sequence[str]], gold: Sequence[Sequence[str]],
            scheme: str = "IOB2") -> F1Report:
    """Micro-averaged exact-match span F1 over aligned tag sequences."""
    if len(predicted) != len(gold):
        raise AlignmentError(f"{len(predicted)} predicted sequences vs {len(gold)} gold")
    n_gold: Counter = Counter()
    n_pred: Counter = Counter()
    n_correct: Counter = Counter()
    for k, (p_tags, g_tags) in enumerate(zip(predicted, gold)):
        if len(p_tags) != len(g_tags):
            raise AlignmentError(
                f"sentence {k}: {len(p_tags)} predicted tags vs {len(g_tags)} gold")
        p_spans = set(extract_spans(p_tags, scheme))
        g_spans = set(extract_spans(g_tags, scheme))
        for sp in g_spans:
            n_gold[sp.entity_type] += 1
        for sp in p_spans:
            n_pred[sp.entity_type] += 1
        for sp in p_spans & g_spans:
            n_correct[sp.entity_type] += 1

    per_type = {}
    for etype in sorted(set(n_gold) | set(n_pred)):
        p, r, f = _prf(n_correct[etype], n_pred[etype], n_gold[etype])
        per_type[etype] = TypeScores(p, r, f, n_gold[etype], n_pred[etype], n_correct[etype])
    p, r, f = _prf(sum(n_correct.values()), sum(n_pred.values()), sum(n_gold.values()))
    return F1Report(p, r, f, per_type)


@dataclass
class CurvePoint:
    iteration: int
    labeled_token_fraction: float
    f1_mean: float
    f1_std: float
    train_seconds: float
    query_seconds: float


@dataclass
class LearningCurve:
    points: list[CurvePoint]
    repeats: int
    label: str = ""

    def at(self, iteration: int) -> CurvePoint:
        for pt in self.points:
            if pt.iteration == iteration:
                return pt
        raise KeyError(iteration)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and standard deviation (n-1 divisor, 0 for a single value)."""
    n = len(values)
    m = math.fsum(values) / n
    if n == 1:
        return m, 0.0
    var = math.fsum((v - m) ** 2 for v in values) / (n - 1)
    return m, math.sqrt(var)


def aggregate_runs(records: Sequence, label: str = "", which: str = "successor") -> LearningCurve:
    """Per-iteration mean/std of F1 over seeded repeats of one configuration.

    ``records`` are :class:`al_seqtag.engine.RunRecord` objects; ``which``
    selects the acquisition or successor evaluation.
    """
    if not records:
        raise AggregationError("no records to aggregate")
    hashes = {r.config_hash for r in records}
    if len(hashes) != 1:
        raise AggregationError(f"records come from different configs: {sorted(hashes)}")
    lengths = {len(r.entries) for r in records}
    if len(lengths) != 1:
        detail = ", ".join(f"seed {r.run_seed}: {len(r.entries)}" for r in records)
        raise AggregationError(f"runs have different iteration counts ({detail})")

    points = []
    for k in range(lengths.pop()):
        entries = [r.entries[k] for r in records]
        iters = {e.iteration for e in entries}
        if len(iters) != 1:
            raise AggregationError(f"misaligned iteration index at position {k}")
        f1s = [(e.successor if which == "successor" else e.acquisition).f1 for e in entries]
        mean, std = mean_std(f1s)
        frac = math.fsum(e.labeled_token_count / r.total_tokens
                         for e, r in zip(entries, records)) / len(records)
        points.append(CurvePoint(
            iteration=entries[0].iteration,
            labeled_token_fraction=frac,
            f1_mean=mean,
            f1_std=std,
            train_seconds=math.fsum(e.train_seconds for e in entries) / len(entries),
            query_seconds=math.fsum(e.query_seconds for e in entries) / len(entries),
        ))
    return LearningCurve(points, len(records), label)
