"""Acquisition functions and token-budgeted batch selection.

Every score is oriented so that higher means "more worth annotating".
All ties (argmax over classes, mode over passes, ranking of sentences)
resolve to the lower index.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import Sentence
from .neural import ForwardCounter, McConfig, McVariant


class StrategyConfigError(ValueError):
    pass


class Strategy(str, enum.Enum):
    RANDOM = "random"
    LC = "lc"
    MNLP = "mnlp"
    VR = "vr"
    BALD = "bald"

    @property
    def needs_mc(self) -> bool:
        return self in (Strategy.VR, Strategy.BALD)


@dataclass(frozen=True)
class AcquisitionScore:
    sentence_id: int
    score: float
    strategy: str
    mc_variant: str = McVariant.NONE.value


def lc_score(seq_log_prob: float, n: int) -> float:
    """1 - P(best path); ``-expm1`` keeps precision near both ends."""
    return float(-math.expm1(min(seq_log_prob, 0.0)))


def mnlp_score(seq_log_prob: float, n: int) -> float:
    if n < 1:
        raise ValueError("sentence length must be >= 1")
    return float(-seq_log_prob / n)


def vr_score(preds: np.ndarray) -> float:
    """Variation ratio of an (M, n, C) tensor, averaged over tokens."""
    M, n, C = preds.shape
    votes = preds.argmax(axis=2)                       # (M, n)
    counts = np.zeros((n, C), dtype=np.int64)
    np.add.at(counts, (np.broadcast_to(np.arange(n), (M, n)), votes), 1)
    mode_count = counts.max(axis=1)
    return float(np.mean((M - mode_count) / M))


def _xlogy(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    safe = np.where(p > 0, p / np.where(q > 0, q, 1.0), 1.0)
    return np.where(p > 0, p * np.log(safe), 0.0)


def bald_score(preds: np.ndarray) -> float:
    """Mutual information between label and dropout mask, averaged over tokens.

    Computed as the mean KL divergence of each pass from the pass average,
    which equals entropy-of-mean minus mean-of-entropies. The mean is formed
    relative to the first pass so identical passes give exactly zero.
    """
    M, n, C = preds.shape
    p0 = preds[0]
    mean = p0 + (preds - p0).sum(axis=0) / M
    per_token = _xlogy(preds, mean[None]).sum(axis=2).mean(axis=0)
    # rounding guard: the exact value lies in [0, log C]
    per_token = np.clip(per_token, 0.0, math.log(C))
    return float(per_token.mean())


def _is_stochastic(model) -> bool:
    return hasattr(model, "predict_stochastic_many")


def score_pool(model, sentences: Sequence[Sentence], strategy: Strategy | str,
               mc: McConfig | None = None, seed: int = 0,
               counter: ForwardCounter | None = None) -> list[AcquisitionScore]:
    """Score every pool sentence for ``strategy``.

    RANDOM scores are the positions of a seeded permutation, so the induced
    ranking is a reproducible shuffle.
    """
    strategy = Strategy(strategy)
    mc = mc or McConfig()
    variant = mc.variant.value
    if strategy is Strategy.RANDOM:
        perm = np.random.default_rng(seed).permutation(len(sentences))
        return [AcquisitionScore(s.id, float(r), strategy.value, variant)
                for s, r in zip(sentences, perm)]
    if strategy.needs_mc:
        if not _is_stochastic(model):
            raise StrategyConfigError(
                f"{strategy.value} needs a model with MC dropout; got {type(model).__name__}")
        if mc.variant is McVariant.NONE:
            raise StrategyConfigError(f"{strategy.value} needs an MC dropout variant")
        fn = vr_score if strategy is Strategy.VR else bald_score
        tensors = model.predict_stochastic_many(sentences, mc, seed, counter)
        return [AcquisitionScore(s.id, fn(t), strategy.value, variant)
                for s, t in zip(sentences, tensors)]
    fn = lc_score if strategy is Strategy.LC else mnlp_score
    logps = model.sequence_log_probs(sentences)
    return [AcquisitionScore(s.id, fn(float(lp), len(s)), strategy.value, variant)
            for s, lp in zip(sentences, logps)]


@dataclass
class PoolState:
    """Labelled/unlabelled split of the training sentences with token counts."""

    lengths: dict[int, int]
    labeled: set[int] = field(default_factory=set)

    def __post_init__(self):
        unknown = self.labeled - self.lengths.keys()
        if unknown:
            raise ValueError(f"labelled ids not in pool: {sorted(unknown)[:5]}")

    @property
    def unlabeled(self) -> set[int]:
        return self.lengths.keys() - self.labeled

    @property
    def labeled_tokens(self) -> int:
        return sum(self.lengths[i] for i in self.labeled)

    @property
    def total_tokens(self) -> int:
        return sum(self.lengths.values())

    def add(self, ids: Iterable[int]) -> None:
        ids = list(ids)
        dup = [i for i in ids if i in self.labeled]
        if dup:
            raise ValueError(f"sentences already labelled: {dup[:5]}")
        self.labeled.update(ids)


def select_batch(scores: Sequence[AcquisitionScore], pool: PoolState, token_budget: float) -> list[int]:
    """Highest scores first (ties: lower id), until the budget is met.

    The last sentence taken may overshoot the budget.
    """
    if token_budget <= 0:
        return []
    unl = pool.unlabeled
    ranked = sorted((s for s in scores if s.sentence_id in unl),
                    key=lambda s: (-s.score, s.sentence_id))
    chosen, tokens = [], 0
    for s in ranked:
        if tokens >= token_budget:
            break
        chosen.append(s.sentence_id)
        tokens += pool.lengths[s.sentence_id]
    return chosen


def write_scores_csv(scores: Sequence[AcquisitionScore], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sentence_id", "score", "strategy", "mc_variant"])
        for s in scores:
            w.writerow([s.sentence_id, repr(s.score), s.strategy, s.mc_variant])
