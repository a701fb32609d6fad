"""Seeded simulation of the detector's error probabilities.

The test only sees empirical types, so trials draw type counts directly
(one multinomial per row) instead of full sequences.  Trials are grouped in
fixed-size blocks and every block gets its own Philox stream keyed by
(seed, block), so results do not depend on how blocks are spread over
workers.  Only integer outcome counts are reduced.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .detector import Outcome, decide_many
from .divergence import complement_masks, g_scores
from .exponents import exponent_report
from .gaussian import second_order_threshold
from .probs import Distribution, Hypothesis, ModelSpec, SequenceBatch

BLOCK = 1000
_SYMBOL_BITS = 53


def _cell_stream(seed: int, trial: int, row: int, n: int) -> np.ndarray:
    """Uniforms for times 0..n-1 of one row; Philox is counter-based, so the
    value at time t depends only on (seed, trial, row, t)."""
    key = np.random.SeedSequence([seed, trial, row]).generate_state(2, np.uint64)
    raw = np.random.Philox(key=key).random_raw(n)
    return (raw >> np.uint64(64 - _SYMBOL_BITS)) * (1.0 / (1 << _SYMBOL_BITS))


def sample_batch(truth: Hypothesis, spec: ModelSpec, n: int, seed: int,
                 trial: int = 0) -> SequenceBatch:
    """One batch of m sequences of length n under ``truth``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rows = spec.row_distributions(truth)
    cdf = np.cumsum(rows, axis=1)
    out = np.empty((spec.m, n), dtype=np.int64)
    for r in range(spec.m):
        u = _cell_stream(seed, trial, r, n)
        out[r] = np.minimum(np.searchsorted(cdf[r], u, side="right"), spec.alphabet_size - 1)
    return SequenceBatch(out)


def wilson_interval(k: int, trials: int) -> tuple[float, float]:
    ci = stats.binomtest(k, trials).proportion_ci(0.95, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class TrialEstimate:
    outcome_kind: Outcome
    count: int
    trials: int
    seed: int
    n: int
    threshold: float
    truth: Hypothesis
    spec_digest: str
    wilson_ci: tuple[float, float] = field(init=False)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        object.__setattr__(self, "wilson_ci", wilson_interval(self.count, self.trials))

    @property
    def p_hat(self) -> float:
        return self.count / self.trials

    @property
    def stderr(self) -> float:
        p = self.p_hat
        return math.sqrt(p * (1 - p) / self.trials)


def _block_counts(args) -> np.ndarray:
    rows, masks, truth_idx, n, threshold, seed, block, size = args
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))
    counts = rng.multinomial(n, rows, size=(size, rows.shape[0]))
    chosen = decide_many(g_scores(counts, masks), threshold)
    out = np.zeros(len(Outcome), dtype=np.int64)
    kinds = list(Outcome)
    reject = chosen < 0
    if truth_idx < 0:
        out[kinds.index(Outcome.CORRECT)] = reject.sum()
        out[kinds.index(Outcome.FALSE_ALARM)] = (~reject).sum()
    else:
        hit = chosen == truth_idx
        out[kinds.index(Outcome.CORRECT)] = hit.sum()
        out[kinds.index(Outcome.FALSE_REJECT)] = reject.sum()
        out[kinds.index(Outcome.MISCLASSIFICATION)] = (~reject & ~hit).sum()
    return out


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


def simulate_outcomes(truth: Hypothesis, spec: ModelSpec, n: int, threshold: float,
                      trials: int, seed: int, workers: int = 1,
                      candidates: list[tuple[int, ...]] | None = None) -> dict[Outcome, int]:
    """Counts of each outcome over ``trials`` independent runs of the test."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if n < 1:
        raise ValueError("n must be at least 1")
    sets = candidates or [h.indices for h in spec.hypotheses()]
    masks = complement_masks(spec.m, sets)
    truth_idx = -1 if truth.is_reject else sets.index(truth.indices)
    rows = spec.row_distributions(truth)
    jobs = [(rows, masks, truth_idx, n, threshold, seed, b, min(BLOCK, trials - b * BLOCK))
            for b in range(math.ceil(trials / BLOCK))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_counts, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        parts = [_block_counts(j) for j in jobs]
    total = np.sum(parts, axis=0)
    return {kind: int(c) for kind, c in zip(Outcome, total)}


def estimate_probability(truth: Hypothesis, outcome_kind: Outcome, spec: ModelSpec, n: int,
                         threshold: float, trials: int, seed: int,
                         workers: int = 1) -> TrialEstimate:
    counts = simulate_outcomes(truth, spec, n, threshold, trials, seed, workers)
    return TrialEstimate(Outcome(outcome_kind), counts[Outcome(outcome_kind)], trials, seed,
                         n, threshold, truth, spec.digest())


def estimate_all(truth: Hypothesis, spec: ModelSpec, n: int, threshold: float, trials: int,
                 seed: int, workers: int = 1) -> list[TrialEstimate]:
    """Estimates of every error kind that can occur under ``truth``."""
    counts = simulate_outcomes(truth, spec, n, threshold, trials, seed, workers)
    kinds = ([Outcome.FALSE_ALARM] if truth.is_reject
             else [Outcome.MISCLASSIFICATION, Outcome.FALSE_REJECT])
    return [TrialEstimate(k, counts[k], trials, seed, n, threshold, truth, spec.digest())
            for k in kinds]


def sub_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=path).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SweepResult:
    axis_name: str
    axis: list
    columns: list[str]
    rows: list[list]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.axis, self.axis[1:])):
            raise ValueError("sweep axis must be strictly increasing")
        if len(self.rows) != len(self.axis):
            raise ValueError("one row per axis value is required")

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [row[j] for row in self.rows]


def sweep_phase_transition(spec: ModelSpec, n_grid, trials: int, seed: int,
                           thresholds=None, eps_grid=None, truth: Hypothesis | None = None,
                           workers: int = 1) -> SweepResult:
    """False-reject estimates over n for fixed thresholds or for thresholds
    calibrated to each eps at each n."""
    if (thresholds is None) == (eps_grid is None):
        raise ValueError("give exactly one of thresholds or eps_grid")
    n_grid = list(n_grid)
    grid = list(thresholds if thresholds is not None else eps_grid)
    if not n_grid or not grid:
        raise ValueError("grids must be non-empty")
    truth = truth or spec.hypotheses()[0]
    label = "threshold" if thresholds is not None else "eps"
    rows = []
    for a, n in enumerate(n_grid):
        row = []
        for j, g in enumerate(grid):
            lam = g if thresholds is not None else max(0.0, second_order_threshold(n, g, spec)[0])
            row.append(estimate_probability(truth, Outcome.FALSE_REJECT, spec, n, lam,
                                            trials, sub_seed(seed, a, j), workers))
        rows.append(row)
    return SweepResult("n", n_grid, [f"{label}={g:g}" for g in grid], rows)


def sweep_effect_of_m(p_n: Distribution, p_a: Distribution, eps: float, n_grid,
                      m_list) -> SweepResult:
    """Analytic second-order thresholds GD_M + L*_M / sqrt(n) per M."""
    n_grid, m_list = list(n_grid), list(m_list)
    if any(m < 3 for m in m_list):
        raise ValueError("m must be at least 3")
    specs = [ModelSpec.single(m, p_n, p_a) for m in m_list]
    rows = [[second_order_threshold(n, eps, s)[0] for s in specs] for n in n_grid]
    return SweepResult("n", n_grid, [f"M={m}" for m in m_list], rows)


def gd_limits(p_n: Distribution, p_a: Distribution, m_list) -> list[float]:
    return [exponent_report(ModelSpec.single(m, p_n, p_a)).gd for m in m_list]
