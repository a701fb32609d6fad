"""First- and second-order exponent quantities.

Single-outlier quantities (``T = 1``) follow the closed forms built from the
two information densities; the multi-outlier versions are built row by row
from the mixture P_Mix^{(B,C)}.  Expectations are exact sums over the
alphabet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .divergence import kl
from .probs import Distribution, ModelSpec, enumerate_outlier_sets, set_rank


def _expect(p: np.ndarray, f: np.ndarray) -> float:
    s = p > 0
    return float(np.sum(p[s] * f[s]))


def _log_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(num / den)


def _require_single(spec: ModelSpec) -> None:
    if spec.t != 1:
        raise ValueError("single-outlier formulas need t = 1")
    if spec.m < 3:
        raise ValueError("single-outlier exponent formulas need m >= 3")


# --- single outlier -------------------------------------------------------

def _single_densities(spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    m = spec.m
    pn, pa = spec.nominal.probs, spec.anomalous[0].probs
    den = (m - 2) * pn + pa
    return _log_ratio((m - 1) * pa, den), _log_ratio((m - 1) * pn, den)


def info_densities_single(x: int, spec: ModelSpec) -> tuple[float, float]:
    """(i1(x), i2(x)): log-ratios of P_A and P_N against the (m-1)-mixture."""
    _require_single(spec)
    if not 0 <= x < spec.alphabet_size:
        raise ValueError(f"symbol {x} outside alphabet")
    if spec.nominal.probs[x] == 0 and spec.anomalous[0].probs[x] == 0:
        raise ValueError(f"symbol {x} has zero probability under both distributions")
    i1, i2 = _single_densities(spec)
    return float(i1[x]), float(i2[x])


def _single_moments(spec: ModelSpec) -> tuple[float, float, float, float]:
    pn, pa = spec.nominal.probs, spec.anomalous[0].probs
    i1, i2 = _single_densities(spec)
    return (_expect(pa, i1), _expect(pn, i2),
            _expect(pa, i1 ** 2), _expect(pn, i2 ** 2))


def gd_single(spec: ModelSpec) -> float:
    _require_single(spec)
    e1, e2, _, _ = _single_moments(spec)
    return e1 + (spec.m - 2) * e2


def var_cov_single(spec: ModelSpec) -> tuple[float, float]:
    """(V_M, Cov_M), the latter in its expanded-moment form."""
    _require_single(spec)
    m = spec.m
    e1, e2, s1, s2 = _single_moments(spec)
    gd = e1 + (m - 2) * e2
    var = (s1 - e1 ** 2) + (m - 2) * (s2 - e2 ** 2)
    cov = (-gd ** 2 + s1 + 2 * (m - 2) * e1 * e2
           + (m * m - 5 * m + 7) * e2 ** 2 + (m - 3) * s2)
    return var, cov


def equicorrelated_matrix(k: int, var: float, cov: float) -> np.ndarray:
    mat = np.full((k, k), cov, dtype=float)
    np.fill_diagonal(mat, var)
    return mat


# --- multiple outliers ----------------------------------------------------

def _check_pair(b, c, spec: ModelSpec) -> tuple[tuple[int, ...], tuple[int, ...]]:
    b, c = tuple(sorted(b)), tuple(sorted(c))
    for s in (b, c):
        if len(s) != spec.t or len(set(s)) != spec.t or s[0] < 1 or s[-1] > spec.m:
            raise ValueError(f"{s} is not a size-{spec.t} subset of [{spec.m}]")
    if b == c:
        raise ValueError("B and C must differ")
    return b, c


def _row_dist(j: int, b: tuple[int, ...], spec: ModelSpec) -> np.ndarray:
    if j in b:
        return spec.anomalous[set_rank(j, b) - 1].probs
    return spec.nominal.probs


def p_mix(b, c, spec: ModelSpec) -> np.ndarray:
    """Average of the true row distributions over the rows outside C."""
    b, c = tuple(sorted(b)), tuple(sorted(c))
    rows = [j for j in range(1, spec.m + 1) if j not in c]
    return np.mean([_row_dist(j, b, spec) for j in rows], axis=0)


def info_densities_multi(x: int, b, c, spec: ModelSpec) -> tuple[np.ndarray, float]:
    """(i_{1,t}(x) for t = 1..T, i_{2,T}(x)) against P_Mix^{(B,C)}.

    ``i_{1,t}`` is +inf at symbols where P_{A,t} is positive but the mixture
    is not (possible only for anomalies not mixed in).
    """
    b, c = _check_pair(b, c, spec)
    if not 0 <= x < spec.alphabet_size:
        raise ValueError(f"symbol {x} outside alphabet")
    mix = p_mix(b, c, spec)
    i1 = np.array([float(_log_ratio(a.probs[x], mix[x])) for a in spec.anomalous])
    return i1, float(_log_ratio(spec.nominal.probs[x], mix[x]))


@dataclass(frozen=True)
class _RowTerms:
    """Per-row density f_j = log(P_j / P_Mix^{(B,C)}) for rows j outside C."""

    rows: tuple[int, ...]
    dists: tuple[np.ndarray, ...]
    dens: tuple[np.ndarray, ...]

    def mean(self, j):
        k = self.rows.index(j)
        return _expect(self.dists[k], self.dens[k])


def _row_terms(b, c, spec: ModelSpec) -> _RowTerms:
    mix = p_mix(b, c, spec)
    rows = tuple(j for j in range(1, spec.m + 1) if j not in c)
    dists = tuple(_row_dist(j, b, spec) for j in rows)
    return _RowTerms(rows, dists, tuple(_log_ratio(p, mix) for p in dists))


def gd_var_multi(b, c, spec: ModelSpec) -> tuple[float, float]:
    """(GD_T(B,C), V_T(B,C))."""
    b, c = _check_pair(b, c, spec)
    rt = _row_terms(b, c, spec)
    gd = sum(_expect(p, f) for p, f in zip(rt.dists, rt.dens))
    var = sum(_expect(p, f ** 2) - _expect(p, f) ** 2 for p, f in zip(rt.dists, rt.dens))
    return gd, var


def gd_multi_sum_of_kl(b, c, spec: ModelSpec) -> float:
    """GD_T(B,C) written as a sum of divergences to the mixture."""
    b, c = _check_pair(b, c, spec)
    mix = p_mix(b, c, spec)
    return sum(kl(_row_dist(j, b, spec), mix) for j in range(1, spec.m + 1) if j not in c)


def cov_linearized(b, c, d, spec: ModelSpec) -> float:
    """Covariance, under H_B, of the per-time linearised scores of C and D.

    Each score uses its own mixture; rows are independent, so only rows
    outside both C and D contribute.
    """
    b, c = _check_pair(b, c, spec)
    _, d = _check_pair(b, d, spec)
    rc, rd = _row_terms(b, c, spec), _row_terms(b, d, spec)
    total = 0.0
    for j in rc.rows:
        if j not in rd.rows:
            continue
        p = _row_dist(j, b, spec)
        fc, fd = rc.dens[rc.rows.index(j)], rd.dens[rd.rows.index(j)]
        total += _expect(p, fc * fd) - _expect(p, fc) * _expect(p, fd)
    return total


def cov_t_display(b, c, d, spec: ModelSpec) -> float:
    """The expanded-moment covariance term for (B, C, D).

    All densities are taken against P_Mix^{(B,C)} and nominal-row
    expectations are under P_N.  Includes the squared nominal term over
    rows outside B, C and D, without which the T = 1 case does not reduce
    to Cov_M.
    """
    b, c = _check_pair(b, c, spec)
    _, d = _check_pair(b, d, spec)
    mix = p_mix(b, c, spec)
    pn = spec.nominal.probs
    i2 = _log_ratio(pn, mix)
    e2, s2 = _expect(pn, i2), _expect(pn, i2 ** 2)

    def a(j):
        p = _row_dist(j, b, spec)
        return _expect(p, _log_ratio(p, mix))

    def s(j):
        p = _row_dist(j, b, spec)
        return _expect(p, _log_ratio(p, mix) ** 2)

    rows = range(1, spec.m + 1)
    b_not_c = [j for j in b if j not in c]
    b_not_d = [j for j in b if j not in d]
    nb_not_c = [j for j in rows if j not in b and j not in c]
    nb_not_d = [j for j in rows if j not in b and j not in d]
    gd, _ = gd_var_multi(b, c, spec)

    total = -gd ** 2
    total += sum(s(j) for j in b_not_c if j not in d)
    total += sum(a(j) * a(l) for j in b_not_c for l in b_not_d if l != j)
    total += sum(a(j) for j in b_not_c) * len(nb_not_d) * e2
    total += len(nb_not_c) * e2 * sum(a(l) for l in b_not_d)
    total += sum(e2 * e2 for j in nb_not_c for l in nb_not_d if l != j)
    total += sum(s2 for j in nb_not_c if j not in d)
    return total


def cov_multi(b, c, spec: ModelSpec) -> float:
    """Two-argument Cov_T(B,C): the linearised covariance averaged over every
    third set D outside {B, C}."""
    b, c = _check_pair(b, c, spec)
    others = [d for d in enumerate_outlier_sets(spec.m, spec.t) if d not in (b, c)]
    return float(np.mean([cov_linearized(b, c, d, spec) for d in others]))


def gd_var_cov_multi(b, c, spec: ModelSpec) -> tuple[float, float, float]:
    gd, var = gd_var_multi(b, c, spec)
    return gd, var, cov_multi(b, c, spec)


def ordered_pairs(spec: ModelSpec):
    sets = enumerate_outlier_sets(spec.m, spec.t)
    return [(b, c) for b in sets for c in sets if b != c]


def gd_multi_min(spec: ModelSpec) -> tuple[float, tuple]:
    """Minimum of GD_T(B,C) over ordered distinct pairs; first minimiser in
    lexicographic pair order wins ties."""
    best, arg = math.inf, None
    for b, c in ordered_pairs(spec):
        gd, _ = gd_var_multi(b, c, spec)
        if gd < best - 1e-15:
            best, arg = gd, (b, c)
    return best, arg


def homogeneous_gd(m: int, t_outliers: int, t_overlap: int, p_n, p_a) -> float:
    """t D(P_A||mix) + (m-T-t) D(P_N||mix), mix = (t P_A + (m-T-t) P_N)/(m-T).

    ``t_overlap`` counts the outliers of B that C misses.
    """
    if not 1 <= t_overlap <= t_outliers or 2 * t_outliers >= m:
        raise ValueError("need 1 <= t_overlap <= t_outliers < m/2")
    pn = p_n.probs if isinstance(p_n, Distribution) else np.asarray(p_n, float)
    pa = p_a.probs if isinstance(p_a, Distribution) else np.asarray(p_a, float)
    k = m - t_outliers
    mix = (t_overlap * pa + (k - t_overlap) * pn) / k
    return t_overlap * kl(pa, mix) + (k - t_overlap) * kl(pn, mix)


# --- report ---------------------------------------------------------------

@dataclass(frozen=True)
class ExponentReport:
    gd: float
    var: float
    cov: float
    k: int
    model: ModelSpec = field(repr=False)
    pair_key: tuple | None = None

    @property
    def cov_matrix(self) -> np.ndarray:
        return equicorrelated_matrix(self.k, self.var, self.cov)

    def check(self, tol: float = 1e-9) -> None:
        # eigenvalues of an equicorrelated matrix: var - cov (k - 1 times)
        # and var + (k - 1) cov
        eig = [self.var + (self.k - 1) * self.cov]
        if self.k > 1:
            eig.append(self.var - self.cov)
        if min(eig) < -tol:
            raise ValueError("covariance matrix is not positive semidefinite")


def cov_matrix(spec: ModelSpec) -> np.ndarray:
    return exponent_report(spec).cov_matrix


@lru_cache(maxsize=256)
def _report_cached(spec_key: str, spec: ModelSpec) -> ExponentReport:
    if spec.t == 1:
        gd = gd_single(spec)
        var, cov = var_cov_single(spec)
        k, pair = spec.m - 1, None
    else:
        gd, pair = gd_multi_min(spec)
        _, var, cov = gd_var_cov_multi(*pair, spec)
        k = math.comb(spec.m, spec.t) - 1
    report = ExponentReport(gd, var, cov, k, spec, pair)
    report.check()
    return report


def exponent_report(spec: ModelSpec) -> ExponentReport:
    return _report_cached(spec.digest(), spec)
