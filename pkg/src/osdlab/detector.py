"""Decision rules: min / second-min scoring with a reject option."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .divergence import ScoreVector, score_vector
from .probs import REJECT, Hypothesis, ModelSpec, SequenceBatch


@dataclass(frozen=True)
class Verdict:
    hypothesis: Hypothesis
    min_score: float
    second_min_score: float
    threshold: float
    scores: ScoreVector | None = None

    @property
    def margin(self) -> float:
        return self.second_min_score - self.threshold

    def as_dict(self) -> dict:
        out = {
            "hypothesis": self.hypothesis.label(),
            "min_score": self.min_score,
            "second_min_score": self.second_min_score,
            "threshold": self.threshold,
            "margin": self.margin,
        }
        if self.scores is not None:
            out["scores"] = self.scores.as_dict()
        return out


def decide(scores: ScoreVector, threshold: float) -> Verdict:
    """Reject when the runner-up score is within the threshold, or when it
    ties the minimum exactly; otherwise name the minimiser."""
    if math.isnan(threshold) or threshold < 0:
        raise ValueError("threshold must be non-negative")
    lo, second = scores.min_value, scores.second_min_value
    if second <= threshold or second == lo:
        hyp = REJECT
    else:
        hyp = scores.argmin
    return Verdict(hyp, lo, second, threshold, scores)


def detect(batch: SequenceBatch, spec: ModelSpec, threshold: float) -> Verdict:
    return decide(score_vector(batch, spec), threshold)


def detect_unknown_t(batch: SequenceBatch, spec: ModelSpec, t_max: int,
                     threshold: float) -> Verdict:
    """Candidates are all outlier sets of size 1..t_max."""
    if not 1 <= t_max or 2 * t_max >= spec.m:
        raise ValueError(f"t_max={t_max} out of range for m={spec.m} (need 1 <= t_max < m/2)")
    return decide(score_vector(batch, spec, max_outliers=t_max), threshold)


class Outcome(str, enum.Enum):
    CORRECT = "Correct"
    MISCLASSIFICATION = "Misclassification"
    FALSE_REJECT = "FalseReject"
    FALSE_ALARM = "FalseAlarm"


def classify_outcome(verdict: Verdict | Hypothesis, truth: Hypothesis) -> Outcome:
    hyp = verdict.hypothesis if isinstance(verdict, Verdict) else verdict
    if truth.is_reject:
        return Outcome.CORRECT if hyp.is_reject else Outcome.FALSE_ALARM
    if hyp.is_reject:
        return Outcome.FALSE_REJECT
    return Outcome.CORRECT if hyp == truth else Outcome.MISCLASSIFICATION


def decide_many(scores: np.ndarray, threshold: float) -> np.ndarray:
    """Vectorised ``decide`` over rows of a score array.

    Returns the chosen candidate index per row, or -1 for reject.
    """
    idx = np.argmin(scores, axis=-1)
    part = np.partition(scores, 1, axis=-1)
    lo, second = part[..., 0], part[..., 1]
    reject = (second <= threshold) | (second == lo)
    return np.where(reject, -1, idx)
