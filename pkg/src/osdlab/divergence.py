"""KL divergences, mixtures and the generalized-divergence scores G_i / G_B.

All quantities are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .probs import (Distribution, Hypothesis, ModelSpec, SequenceBatch,
                    enumerate_outlier_sets)

# Scores are saturated here instead of carrying inf so min / second-min stay
# totally ordered.
SATURATED = 1e18


def _as_probs(d) -> np.ndarray:
    return d.probs if isinstance(d, Distribution) else np.asarray(d, dtype=float)


def kl(p, q) -> float:
    """D(p || q) with 0 log 0 = 0; ``inf`` when p is not dominated by q."""
    p, q = _as_probs(p), _as_probs(q)
    if p.shape != q.shape:
        raise ValueError(f"alphabet mismatch: {p.size} vs {q.size}")
    s = p > 0
    if np.any(q[s] <= 0):
        return float("inf")
    return float(np.sum(p[s] * np.log(p[s] / q[s])))


def binary_kl(a: float, b: float) -> float:
    return kl([1 - a, a], [1 - b, b])


def mixture(ds: Sequence, weights: Sequence[float]) -> Distribution:
    w = np.asarray(weights, dtype=float)
    if len(ds) != w.size:
        raise ValueError("one weight per distribution is required")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must be non-negative and sum to 1 (got {w.sum()!r})")
    stacked = np.stack([_as_probs(d) for d in ds])
    out = w @ stacked
    return Distribution(out / out.sum())


def complement_masks(m: int, sets: Sequence[Sequence[int]]) -> np.ndarray:
    """Boolean ``(len(sets), m)`` array, True for rows *outside* each set."""
    masks = np.ones((len(sets), m), dtype=bool)
    for h, b in enumerate(sets):
        masks[h, [i - 1 for i in b]] = False
    return masks


def g_scores(weights: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Vectorised G over many candidate sets.

    ``weights`` has shape ``(..., m, K)`` and holds either probabilities or
    integer counts (rows must share a common total).  With counts, equal rows
    give a score of exactly 0.  Returns shape ``(..., len(masks))``.
    """
    w = np.asarray(weights)
    totals = w[..., 0, :].sum(-1)
    out = np.empty(w.shape[:-2] + (masks.shape[0],))
    with np.errstate(divide="ignore", invalid="ignore"):
        for h, comp in enumerate(masks):
            sub = w[..., comp, :]
            k = int(comp.sum())
            pooled = sub.sum(-2, keepdims=True)
            ratio = (sub * k) / pooled
            terms = np.where(sub > 0, sub * np.log(ratio), 0.0)
            out[..., h] = terms.sum((-2, -1)) / totals
    return np.clip(out, 0.0, SATURATED)


def _stack(types) -> np.ndarray:
    if isinstance(types, np.ndarray):
        return types
    return np.stack([_as_probs(q) for q in types])


def g_score(hyp: Hypothesis, types) -> float:
    """G_i (single index) or G_B (index set) of a list of ``m`` distributions."""
    if hyp.is_reject:
        raise ValueError("the reject hypothesis has no score")
    q = _stack(types)
    m = q.shape[0]
    hyp.check(m)
    return float(g_scores(q, complement_masks(m, [hyp.indices]))[0])


@dataclass(frozen=True)
class ScoreVector:
    """Scores of every candidate hypothesis, in enumeration order."""

    hypotheses: tuple[Hypothesis, ...]
    scores: np.ndarray

    @property
    def min_index(self) -> int:
        # np.argmin returns the first minimiser: ties go to the earliest hypothesis.
        return int(np.argmin(self.scores))

    @property
    def min_value(self) -> float:
        return float(self.scores[self.min_index])

    @property
    def argmin(self) -> Hypothesis:
        return self.hypotheses[self.min_index]

    @property
    def second_min_value(self) -> float:
        if len(self.scores) < 2:
            return float("inf")
        return float(np.partition(self.scores, 1)[1])

    def as_dict(self) -> dict[str, float]:
        return {h.label(): float(s) for h, s in zip(self.hypotheses, self.scores)}


def candidate_sets(m: int, t: int, max_outliers: int | None = None) -> list[tuple[int, ...]]:
    """S_t, or the union of S_1..S_max_outliers for the unknown-count variant."""
    if max_outliers is None:
        return enumerate_outlier_sets(m, t)
    sets = []
    for size in range(1, max_outliers + 1):
        sets.extend(enumerate_outlier_sets(m, size))
    return sets


def score_vector(batch: SequenceBatch, spec: ModelSpec,
                 max_outliers: int | None = None) -> ScoreVector:
    """Types are computed once from integer counts; then G over all candidates."""
    if batch.m != spec.m:
        raise ValueError(f"batch has {batch.m} rows, model expects m={spec.m}")
    batch.check_alphabet(spec.alphabet_size)
    counts = np.stack([np.bincount(r, minlength=spec.alphabet_size)
                       for r in batch.sequences])
    sets = candidate_sets(spec.m, spec.t, max_outliers)
    scores = g_scores(counts, complement_masks(spec.m, sets))
    return ScoreVector(tuple(Hypothesis(b) for b in sets), scores)


def kl_sum_decomposition_check(i: int, qs, p) -> tuple[float, float]:
    """Both sides of
    sum_{j != i} D(Q_j||P) = (m-1) D(avg||P) + G_i(Q),
    where avg is the mean of the Q_j with j != i.
    """
    q = _stack(qs)
    m = q.shape[0]
    others = [j for j in range(m) if j != i - 1]
    lhs = sum(kl(q[j], p) for j in others)
    avg = q[others].mean(0)
    rhs = (m - 1) * kl(avg, p) + g_score(Hypothesis((i,)), q)
    return lhs, rhs
