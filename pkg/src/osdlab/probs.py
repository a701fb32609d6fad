"""Core probability and data types.

Distributions live on a finite alphabet ``{0, ..., K-1}``; sequences are
arrays of symbol indices.  Everything here is immutable after construction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SUM_TOL = 1e-12
EQ_TOL = 1e-12


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability vector over a finite alphabet."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).ravel()
        if p.size < 2:
            raise ValueError("alphabet_size must be at least 2")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def bernoulli(cls, p: float) -> "Distribution":
        return cls(np.array([1.0 - p, p]))

    @property
    def alphabet_size(self) -> int:
        return self.probs.size

    def distance(self, other: "Distribution") -> float:
        if other.alphabet_size != self.alphabet_size:
            raise ValueError("alphabet size mismatch")
        return float(np.max(np.abs(self.probs - other.probs)))

    def __eq__(self, other):
        if not isinstance(other, Distribution):
            return NotImplemented
        return (self.alphabet_size == other.alphabet_size
                and self.distance(other) <= EQ_TOL)

    def __hash__(self):
        return hash(tuple(np.round(self.probs, 12)))

    def __repr__(self):
        return f"Distribution({np.array2string(self.probs, precision=6)})"


@dataclass(frozen=True, eq=False)
class EmpiricalType(Distribution):
    """Type (empirical distribution) of a length-``n`` sequence.

    ``counts`` are kept alongside so exactness checks do not depend on
    floating point division.
    """

    counts: np.ndarray = field(default=None)
    n: int = 0

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64).ravel()
        if c.sum() != self.n or self.n < 1 or np.any(c < 0):
            raise ValueError("counts must be non-negative and sum to n >= 1")
        object.__setattr__(self, "counts", _frozen(c))
        object.__setattr__(self, "probs", c / self.n)
        super().__post_init__()

    def __repr__(self):
        return f"EmpiricalType(counts={self.counts.tolist()}, n={self.n})"


def empirical_type(x: Sequence[int], alphabet_size: int) -> EmpiricalType:
    """Return the type of ``x`` over ``{0, ..., alphabet_size-1}``."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("empty sequence has no type")
    if x.ndim != 1 or not np.issubdtype(x.dtype, np.integer):
        raise ValueError("sequence must be a 1-D array of integer symbols")
    if x.min() < 0 or x.max() >= alphabet_size:
        bad = int(np.flatnonzero((x < 0) | (x >= alphabet_size))[0])
        raise ValueError(f"symbol {int(x[bad])} at position {bad} is outside "
                         f"alphabet of size {alphabet_size}")
    counts = np.bincount(x, minlength=alphabet_size)
    return EmpiricalType(probs=counts / x.size, counts=counts, n=int(x.size))


@dataclass(frozen=True)
class SequenceBatch:
    """``m`` observed sequences of common length ``n`` (rows are sequences)."""

    sequences: np.ndarray

    def __post_init__(self):
        s = np.array(self.sequences)
        if s.ndim != 2 or s.shape[1] < 1 or s.shape[0] < 1:
            raise ValueError("batch must be a non-empty 2-D array (m rows, n >= 1 columns)")
        if not np.issubdtype(s.dtype, np.integer):
            raise ValueError("symbols must be integers")
        if s.min() < 0:
            raise ValueError("symbols must be non-negative")
        object.__setattr__(self, "sequences", _frozen(s.astype(np.int64)))

    @property
    def m(self) -> int:
        return self.sequences.shape[0]

    @property
    def n(self) -> int:
        return self.sequences.shape[1]

    def check_alphabet(self, alphabet_size: int) -> None:
        bad = np.argwhere(self.sequences >= alphabet_size)
        if bad.size:
            r, c = bad[0]
            raise ValueError(f"symbol {int(self.sequences[r, c])} at row {r + 1}, "
                             f"column {c + 1} is outside alphabet of size {alphabet_size}")

    def types(self, alphabet_size: int) -> list[EmpiricalType]:
        self.check_alphabet(alphabet_size)
        return [empirical_type(row, alphabet_size) for row in self.sequences]

    def type_matrix(self, alphabet_size: int) -> np.ndarray:
        """Row-stacked empirical types, shape ``(m, alphabet_size)``."""
        self.check_alphabet(alphabet_size)
        counts = np.stack([np.bincount(r, minlength=alphabet_size) for r in self.sequences])
        return counts / self.n


# Hypotheses.  Indices are 1-based everywhere in the public API, matching how
# sequences are numbered in reports; arrays are indexed with ``i - 1``.

@dataclass(frozen=True, order=True)
class Hypothesis:
    """``Single(i)``, ``Multi(B)`` or ``Reject``.

    Single and Multi are both represented by a sorted tuple of 1-based
    indices; ``indices == ()`` is the reject hypothesis.
    """

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 1 for i in idx):
            raise ValueError("hypothesis indices are 1-based")
        if any(a >= b for a, b in zip(idx, idx[1:])):
            raise ValueError("outlier index set must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    @property
    def is_reject(self) -> bool:
        return not self.indices

    @property
    def size(self) -> int:
        return len(self.indices)

    def check(self, m: int, t: int | None = None) -> None:
        if self.is_reject:
            return
        if self.indices[-1] > m:
            raise ValueError(f"index {self.indices[-1]} out of range for m={m}")
        if 2 * self.size >= m:
            raise ValueError(f"outlier set of size {self.size} is ill-posed for m={m}")
        if t is not None and self.size != t:
            raise ValueError(f"expected an outlier set of size {t}, got {self.size}")

    def label(self) -> str:
        if self.is_reject:
            return "H_r"
        if self.size == 1:
            return f"H_{self.indices[0]}"
        return "H_{" + ",".join(map(str, self.indices)) + "}"

    def __str__(self):
        return self.label()


def Single(i: int) -> Hypothesis:
    return Hypothesis((i,))


def Multi(b: Iterable[int]) -> Hypothesis:
    return Hypothesis(tuple(sorted(b)))


REJECT = Hypothesis(())


def parse_hypothesis(text: str) -> Hypothesis:
    """Parse ``"r"``/``"reject"``, ``"2"`` or ``"1,3"`` (1-based)."""
    text = text.strip().lower()
    if text in ("r", "reject", "h_r"):
        return REJECT
    text = text.removeprefix("h_").strip("{} ")
    return Multi(int(tok) for tok in text.replace(" ", ",").split(",") if tok)


def enumerate_outlier_sets(m: int, t: int) -> list[tuple[int, ...]]:
    """All size-``t`` subsets of ``[m]`` in lexicographic order (1-based)."""
    if t < 1:
        raise ValueError("t must be at least 1")
    if 2 * t >= m:
        raise ValueError(f"t={t} outliers among m={m} sequences is ill-posed (need t < m/2)")
    return list(itertools.combinations(range(1, m + 1), t))


def set_rank(i: int, b: Sequence[int]) -> int:
    """1-based position of ``i`` in ``b`` sorted ascending."""
    ordered = sorted(b)
    if i not in ordered:
        raise ValueError(f"{i} is not in {tuple(ordered)}")
    return ordered.index(i) + 1


@dataclass(frozen=True)
class ModelSpec:
    """A hypothesis family: ``m`` sequences, ``t`` outliers, and the
    nominal / anomalous distributions that generate them.

    ``anomalous[k]`` generates the outlier at ascending position ``k+1`` of
    the outlier set.
    """

    m: int
    nominal: Distribution
    anomalous: tuple[Distribution, ...]

    def __post_init__(self):
        anomalous = tuple(self.anomalous)
        object.__setattr__(self, "anomalous", anomalous)
        t = len(anomalous)
        if t < 1:
            raise ValueError("at least one anomalous distribution is required")
        if self.m < 2:
            raise ValueError("need at least two sequences")
        if 2 * t >= self.m:
            raise ValueError(f"t={t} outliers among m={self.m} sequences is ill-posed (need t < m/2)")
        k = self.nominal.alphabet_size
        for a in anomalous:
            if a.alphabet_size != k:
                raise ValueError("all distributions must share one alphabet size")
            if a == self.nominal:
                raise ValueError("indistinguishable pair: anomalous distribution equals nominal")

    @classmethod
    def single(cls, m: int, nominal: Distribution, anomalous: Distribution) -> "ModelSpec":
        return cls(m, nominal, (anomalous,))

    @classmethod
    def homogeneous(cls, m: int, t: int, nominal: Distribution,
                    anomalous: Distribution) -> "ModelSpec":
        return cls(m, nominal, (anomalous,) * t)

    @property
    def t(self) -> int:
        return len(self.anomalous)

    @property
    def alphabet_size(self) -> int:
        return self.nominal.alphabet_size

    def hypotheses(self) -> list[Hypothesis]:
        return [Hypothesis(b) for b in enumerate_outlier_sets(self.m, self.t)]

    def row_distributions(self, truth: Hypothesis) -> np.ndarray:
        """Generating distribution of every row under ``truth``, shape ``(m, K)``."""
        truth.check(self.m, None if truth.is_reject else self.t)
        rows = np.tile(self.nominal.probs, (self.m, 1))
        for pos, i in enumerate(truth.indices):
            rows[i - 1] = self.anomalous[pos].probs
        return rows

    def digest(self) -> str:
        parts = [f"m={self.m}", "pn=" + ",".join(f"{v:.12g}" for v in self.nominal.probs)]
        for a in self.anomalous:
            parts.append("pa=" + ",".join(f"{v:.12g}" for v in a.probs))
        return ";".join(parts)
