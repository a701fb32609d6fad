"""Equicorrelated Gaussian orthant probabilities and the quantile L*.

Q_k(L) = P(Z_1 > L, ..., Z_k > L) for a zero-mean Gaussian with common
variance ``var`` and common covariance ``cov``.  For non-negative
correlation the vector is written as sqrt(rho) W + sqrt(1 - rho) U_j, which
turns Q_k into a one-dimensional integral over W.  Negative correlation has
no such real factorisation, so it falls back to randomised quasi-Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special, stats

from .exponents import exponent_report, gd_var_cov_multi, ordered_pairs
from .probs import ModelSpec

MIN_VAR = 1e-12
GH_NODES = 200
QMC_LOG2 = 14
QMC_REPLICATES = 8
QMC_SEED = 20240611
L_TOL = 1e-7

_gh_x, _gh_w = np.polynomial.hermite_e.hermegauss(GH_NODES)
_gh_w = _gh_w / math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class OrthantQuery:
    k: int
    threshold: float
    var: float
    cov: float

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("dimension k must be at least 1")
        if not self.var > 0:
            raise ValueError("variance must be positive")
        rho = self.rho
        if rho > 1 + 1e-12:
            raise ValueError(f"correlation {rho} exceeds 1")
        if self.k > 1 and rho <= -1 / (self.k - 1) + 1e-12:
            raise ValueError(f"correlation {rho} below the equicorrelated limit "
                             f"-1/(k-1) = {-1 / (self.k - 1)}")

    @property
    def rho(self) -> float:
        return self.cov / self.var if self.k > 1 else 0.0


def _log_sf(a):
    return special.log_ndtr(-np.asarray(a, dtype=float))


def _orthant_factor(q: OrthantQuery) -> float:
    rho = min(q.rho, 1.0)
    a = q.threshold / math.sqrt(q.var)
    if q.k == 1 or rho == 0.0:
        return float(np.exp(q.k * _log_sf(a)))
    if rho >= 1.0 - 1e-14:
        return float(np.exp(_log_sf(a)))
    sr, sc = math.sqrt(rho), math.sqrt(1.0 - rho)

    def integrand(w):
        return np.exp(q.k * _log_sf((a - sr * w) / sc))

    if rho < 0.9:
        return float(np.clip(np.dot(_gh_w, integrand(_gh_x)), 0.0, 1.0))
    # Close to 1 the integrand is a steep step around w0; split there.
    w0 = a / sr
    f = lambda w: integrand(w) * math.exp(-0.5 * w * w) / math.sqrt(2 * math.pi)
    lo, hi = min(-12.0, w0 - 12.0), max(12.0, w0 + 12.0)
    val = 0.0
    for x0, x1 in ((lo, w0), (w0, hi)):
        val += integrate.quad(f, x0, x1, limit=400, epsabs=1e-10, epsrel=1e-10)[0]
    return float(np.clip(val, 0.0, 1.0))


def orthant_prob_qmc(q: OrthantQuery, log2_points: int = QMC_LOG2,
                     replicates: int = QMC_REPLICATES,
                     seed: int = QMC_SEED) -> tuple[float, float]:
    """Scrambled-Sobol estimate and its standard error across replicates.

    The orthant is integrated in Genz's separation-of-variables form: each
    coordinate is drawn from its conditional law truncated to the orthant and
    the estimate is the product of the truncation masses, a smooth integrand
    on which QMC converges quickly.
    """
    mat = np.full((q.k, q.k), q.cov)
    np.fill_diagonal(mat, q.var)
    chol = np.linalg.cholesky(mat)
    est = []
    for child in np.random.SeedSequence(seed).spawn(replicates):
        w = stats.qmc.Sobol(max(q.k - 1, 1), scramble=True, seed=np.random.default_rng(child)
                            ).random_base2(log2_points)
        y = np.zeros((w.shape[0], q.k))
        mass = np.ones(w.shape[0])
        for i in range(q.k):
            lo = special.ndtr((q.threshold - y[:, :i] @ chol[i, :i]) / chol[i, i])
            mass *= 1.0 - lo
            if i < q.k - 1:
                u = lo + w[:, i] * (1.0 - lo)
                y[:, i] = special.ndtri(np.clip(u, 1e-16, 1 - 1e-16))
        est.append(mass.mean())
    est = np.asarray(est)
    return float(est.mean()), float(est.std(ddof=1) / math.sqrt(replicates))


def orthant_prob(q: OrthantQuery, method: str = "auto") -> float:
    """Q_k(L); ``method`` is ``"auto"``, ``"quadrature"`` or ``"qmc"``."""
    if method == "qmc" or (method == "auto" and q.rho < 0):
        return orthant_prob_qmc(q)[0]
    if q.rho < 0:
        raise ValueError("quadrature needs non-negative correlation")
    return _orthant_factor(q)


def l_star_from(var: float, cov: float, k: int, eps: float) -> float:
    """Largest L with Q_k(L) >= 1 - eps, to within ``L_TOL``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if var < MIN_VAR:
        raise ValueError("indistinguishable pair: dispersion is zero")
    return _l_star_cached(float(var), float(cov), int(k), float(eps))


@lru_cache(maxsize=4096)
def _l_star_cached(var, cov, k, eps):
    target = 1.0 - eps
    prob = lambda L: orthant_prob(OrthantQuery(k, L, var, cov))
    step = math.sqrt(var)
    lo, hi = -step, step
    while prob(lo) < target:
        lo, step = lo - step, 2 * step
    step = math.sqrt(var)
    while prob(hi) >= target:
        hi, step = hi + step, 2 * step
    while hi - lo > L_TOL:
        mid = 0.5 * (lo + hi)
        if prob(mid) >= target:
            lo = mid
        else:
            hi = mid
    return lo


def _pair_moments(spec: ModelSpec) -> list[tuple[tuple, float, float, float]]:
    return _pair_moments_cached(spec.digest(), spec)


@lru_cache(maxsize=64)
def _pair_moments_cached(key, spec):
    return [(pair, *gd_var_cov_multi(*pair, spec)) for pair in ordered_pairs(spec)]


def l_star(eps: float, spec: ModelSpec, pair=None) -> float:
    """L* for the model's covariance matrix, or for the matrix built on a
    specific (B, C) pair when ``pair`` is given."""
    if spec.t == 1 and pair is None:
        rep = exponent_report(spec)
        return l_star_from(rep.var, rep.cov, spec.m - 1, eps)
    k = math.comb(spec.m, spec.t) - 1
    if pair is None:
        rep = exponent_report(spec)
        return l_star_from(rep.var, rep.cov, k, eps)
    b, c = (tuple(sorted(s)) for s in pair)
    _, var, cov = gd_var_cov_multi(b, c, spec)
    return l_star_from(var, cov, k, eps)


def second_order_threshold(n: int, eps: float, spec: ModelSpec,
                           correction: float = 0.0) -> tuple[float, float]:
    """(lambda_tilde, lambda).

    lambda_tilde is the second-order calibrated score threshold (plus an
    optional additive ``correction``); lambda subtracts the type-counting
    slack that appears in the non-asymptotic bounds.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    K = spec.alphabet_size
    if spec.t == 1:
        rep = exponent_report(spec)
        tilde = rep.gd + l_star(eps, spec) / math.sqrt(n)
        slack = (K * math.log((spec.m - 1) * n + 1) + 2 * math.log(spec.m)) / n
    else:
        k = math.comb(spec.m, spec.t) - 1
        tilde = min(gd + l_star_from(var, cov, k, eps) / math.sqrt(n)
                    for _, gd, var, cov in _pair_moments(spec))
        slack = (K * math.log((spec.m - spec.t) * n + 1)
                 + 2 * math.log(math.comb(spec.m, spec.t))) / n
    tilde += correction
    return tilde, tilde - slack
