"""Exponential-regime quantities: LD(lambda), the tradeoff f(E) and a grid oracle.

LD for a true outlier set B is

    min over candidate pairs {C, D}   min over Q with G_C(Q) <= lam, G_D(Q) <= lam
        sum_i D(Q_i || P_i)

where P_i is the generating distribution of row i under B.  Each G is jointly
convex in Q, so every inner problem is a smooth convex program; it is solved
with SLSQP from a few starting points and then pulled back into the feasible
set along the segment to an all-rows-equal point, where both scores are 0.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import optimize

from .divergence import complement_masks, g_scores
from .exponents import exponent_report
from .probs import Hypothesis, ModelSpec, enumerate_outlier_sets


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverSettings:
    restarts: int = 2
    max_iter: int = 10_000
    ftol: float = 1e-12
    feas_tol: float = 1e-9
    seed: int = 0
    symmetric: bool = True


@dataclass(frozen=True)
class LdProblem:
    spec: ModelSpec
    lam: float
    truth: Hypothesis | None = None
    settings: SolverSettings = field(default_factory=SolverSettings)
    grid_resolution: int = 400

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.grid_resolution < 2:
            raise ValueError("grid resolution must be at least 2")
        truth = self.truth or Hypothesis(tuple(range(1, self.spec.t + 1)))
        truth.check(self.spec.m, self.spec.t)
        object.__setattr__(self, "truth", truth)

    @property
    def rows(self) -> np.ndarray:
        return self.spec.row_distributions(self.truth)


@dataclass(frozen=True)
class LdResult:
    value: float
    minimizer: np.ndarray = field(repr=False)
    pair: tuple
    converged: bool = True
    max_violation: float = 0.0


# --- helpers ----------------------------------------------------------------

def _kl_rows(q: np.ndarray, p: np.ndarray) -> float:
    s = q > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(q[s] * np.log(q[s] / p[s])))


def _g(q: np.ndarray, comp: np.ndarray) -> float:
    return float(g_scores(q, comp[None, :])[0])


def _geometric_point(p: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalised geometric mean of the rows of ``p`` and -log of its
    normaliser."""
    with np.errstate(divide="ignore"):
        logp = np.log(p).mean(0)
    w = np.exp(logp)
    z = w.sum()
    if z == 0:
        raise ValueError("rows share no common support; the zero-threshold problem is infeasible")
    return w / z, -math.log(z)


def candidate_pairs(spec: ModelSpec, truth: Hypothesis, symmetric: bool = True):
    """Unordered pairs of distinct candidate sets.

    With ``symmetric`` only one representative per orbit under relabelings of
    the nominal rows is returned; the value of the inner problem is constant
    on each orbit.
    """
    sets = enumerate_outlier_sets(spec.m, spec.t)
    pairs = list(itertools.combinations(sets, 2))
    if not symmetric:
        return pairs
    b = set(truth.indices)

    def sig(c, d):
        c, d = set(c), set(d)
        nominal = [j for j in range(1, spec.m + 1) if j not in b]
        return (tuple(sorted(c & b)), tuple(sorted(d & b)),
                sum(j in c and j not in d for j in nominal),
                sum(j in d and j not in c for j in nominal),
                sum(j in c and j in d for j in nominal))

    seen, reps = set(), []
    for c, d in pairs:
        key = min(sig(c, d), sig(d, c))
        if key not in seen:
            seen.add(key)
            reps.append((c, d))
    return reps


def ld_lambda0(spec: ModelSpec, truth: Hypothesis | None = None) -> tuple[float, np.ndarray]:
    """Closed-form LD at lambda = 0 and a minimiser.

    Both scores vanish only if all rows outside C and D's intersection
    coincide; the best common row is the normalised geometric mean of their
    generating distributions.  With one outlier this is
    -m log sum_x P_A(x)^{1/m} P_N(x)^{(m-1)/m}.
    """
    problem = LdProblem(spec, 0.0, truth)
    p = problem.rows
    best, arg = math.inf, None
    for c, d in candidate_pairs(spec, problem.truth):
        free = sorted(set(c) & set(d))
        tied = [i for i in range(spec.m) if i + 1 not in free]
        g, neglog = _geometric_point(p[tied])
        value = len(tied) * neglog
        if value < best:
            q = p.copy()
            q[tied] = g
            best, arg = value, q
    return best, arg


def ld_cap(spec: ModelSpec) -> float:
    """Largest false-reject exponent with a positive tradeoff value."""
    return ld_lambda0(spec)[0]


# --- SLSQP solver -----------------------------------------------------------

def _solve_pair(p: np.ndarray, comps: np.ndarray, lam: float, settings: SolverSettings,
                rng: np.random.Generator) -> tuple[float, np.ndarray, bool]:
    m, k = p.shape
    if max(_g(p, c) for c in comps) <= lam:
        return 0.0, p.copy(), True
    free = p > 0
    idx = np.flatnonzero(free.ravel())
    logp = np.log(p[free])
    row_of = np.repeat(np.arange(m), free.sum(1))
    a_eq = np.zeros((m, idx.size))
    a_eq[row_of, np.arange(idx.size)] = 1.0

    def full(z):
        q = np.zeros(m * k)
        q[idx] = z
        return q.reshape(m, k)

    def obj(z):
        return float(np.sum(z * (np.log(z) - logp)))

    def obj_grad(z):
        return np.log(z) - logp + 1.0

    def con(z, comp):
        return lam - _g(full(z), comp)

    def con_grad(z, comp):
        q = full(z)
        avg = q[comp].mean(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(comp[:, None] & (q > 0), np.log(q / avg), 0.0)
        return -d.ravel()[idx]

    cons = [{"type": "ineq", "fun": con, "jac": con_grad, "args": (c,)} for c in comps]
    cons.append({"type": "eq", "fun": lambda z: a_eq @ z - 1.0, "jac": lambda z: a_eq})

    # Start from the model, from the all-equal feasible point, then at random.
    g, _ = _geometric_point(p)
    starts = [p, np.where(free, g, 0.0)]
    while len(starts) < settings.restarts:
        starts.append(np.where(free, rng.dirichlet(np.ones(k), size=m), 0.0))
    best, best_q, ok = math.inf, None, False
    for q0 in starts[:max(settings.restarts, 1)]:
        q0 = q0 / q0.sum(1, keepdims=True)
        z0 = np.clip(q0[free], 1e-12, 1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimize.minimize(obj, z0, jac=obj_grad, method="SLSQP",
                                    bounds=[(1e-300, 1.0)] * idx.size, constraints=cons,
                                    options={"maxiter": settings.max_iter, "ftol": settings.ftol})
        q = full(np.clip(res.x, 0.0, None))
        q = q / q.sum(1, keepdims=True)
        q = _restore(q, p, comps, lam)
        if q is None:
            continue
        value = sum(_kl_rows(q[i], p[i]) for i in range(m))
        if value < best:
            best, best_q = value, q
        ok = ok or res.success
    if best_q is None:
        return math.inf, p.copy(), False
    return best, best_q, ok


def _restore(q: np.ndarray, p: np.ndarray, comps: np.ndarray, lam: float) -> np.ndarray | None:
    """Move ``q`` toward the all-equal point until both scores are <= lam.

    Scores are jointly convex and vanish at the target, so G((1-a)q + a q0)
    <= (1-a) G(q); the required ``a`` has a closed form.
    """
    gs = [_g(q, c) for c in comps]
    worst = max(gs)
    if worst <= lam:
        return q
    try:
        g, _ = _geometric_point(p)
    except ValueError:
        return None
    a = 1.0 - lam / worst
    while True:
        cand = (1 - a) * q + a * g[None, :]
        if max(_g(cand, c) for c in comps) <= lam or a >= 1.0:
            return cand
        a = min(1.0, a * (1 + 1e-6) + 1e-15)


def solve_ld(problem: LdProblem) -> LdResult:
    """LD(lam) for the problem's true set: min over candidate pairs."""
    spec, lam, s = problem.spec, problem.lam, problem.settings
    p = problem.rows
    rng = np.random.default_rng(s.seed)
    if lam == 0.0:
        value, q = ld_lambda0(spec, problem.truth)
        return LdResult(value, q, None)
    best = LdResult(math.inf, p, None, False)
    all_ok = True
    for c, d in candidate_pairs(spec, problem.truth, s.symmetric):
        comps = complement_masks(spec.m, [c, d])
        value, q, ok = _solve_pair(p, comps, lam, s, rng)
        all_ok &= ok
        if value < best.value:
            viol = max(_g(q, cm) for cm in comps) - lam
            best = LdResult(value, q, (c, d), ok, max(viol, 0.0))
    if not all_ok:
        warnings.warn(f"LD solver did not converge for every pair at lambda={lam}",
                      ConvergenceWarning, stacklevel=2)
        best = LdResult(best.value, best.minimizer, best.pair, False, best.max_violation)
    return best


def ld_single(i: int, lam: float, spec: ModelSpec,
              settings: SolverSettings | None = None) -> float:
    if spec.t != 1:
        raise ValueError("ld_single needs a single-outlier spec")
    return solve_ld(LdProblem(spec, lam, Hypothesis((i,)), settings or SolverSettings())).value


def ld_multi(lam: float, spec: ModelSpec, settings: SolverSettings | None = None) -> float:
    """min over true sets B of LD_B(lam).

    Relabeling rows maps any B onto {1..T} while preserving the order of the
    anomalous distributions, so every B gives the same value.
    """
    return solve_ld(LdProblem(spec, lam, None, settings or SolverSettings())).value


def _zero_boundary(spec: ModelSpec) -> float:
    """Smallest lambda at which LD vanishes: the model itself becomes feasible
    for some candidate pair."""
    truth = Hypothesis(tuple(range(1, spec.t + 1)))
    p = spec.row_distributions(truth)
    best = math.inf
    for c, d in candidate_pairs(spec, truth, symmetric=False):
        best = min(best, max(_g(p, cm) for cm in complement_masks(spec.m, [c, d])))
    return best


def f_tradeoff(e: float, spec: ModelSpec, settings: SolverSettings | None = None,
               xtol: float = 1e-9) -> float:
    """sup{lam >= 0 : LD(lam) >= e}.

    For e = 0 the set is unbounded; the value reported is the limit as e
    decreases to 0, which is where LD first vanishes.  For e above LD(0) the
    set is empty and 0 is returned.
    """
    if e < 0:
        raise ValueError("exponent must be non-negative")
    hi = _zero_boundary(spec)
    if e == 0:
        return hi
    if ld_multi(0.0, spec, settings) < e:
        return 0.0
    fn = lambda lam: ld_multi(lam, spec, settings) - e
    return optimize.brentq(fn, 0.0, hi, xtol=xtol)


def f_table(spec: ModelSpec, exponents, settings: SolverSettings | None = None):
    return [(float(e), f_tradeoff(float(e), spec, settings)) for e in exponents]


# --- grid oracle ------------------------------------------------------------

def _entropy(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -x * np.log(x) - (1 - x) * np.log1p(-x)
    return np.nan_to_num(h, nan=0.0)


@numba.njit(cache=True)
def _g_partial(ks, comp, upto, r, htabs, hrow):
    n = 0
    s = 0
    e = 0.0
    for t in range(upto):
        if comp[t]:
            n += 1
            s += ks[t]
            e += hrow[ks[t]]
    if n == 0:
        return 0.0
    return n * htabs[n, s] - e


@numba.njit(cache=True)
def _g_last(s0, e0, n0, kl, r, htabs, hrow):
    return (n0 + 1) * htabs[n0 + 1, s0 + kl] - (e0 + hrow[kl])


@numba.njit(cache=True)
def _feasible_interval(s0, e0, n0, r, htabs, hrow, lam):
    """Grid indices of the last coordinate keeping one score <= lam.

    The score is convex in that coordinate with minimiser at the mean of the
    other rows, so the feasible grid points are contiguous around it.
    """
    centre = s0 / n0
    c_lo = max(1, min(r - 1, int(math.floor(centre))))
    c_hi = max(1, min(r - 1, c_lo + 1))
    if _g_last(s0, e0, n0, c_lo, r, htabs, hrow) <= lam:
        c = c_lo
    elif _g_last(s0, e0, n0, c_hi, r, htabs, hrow) <= lam:
        c = c_hi
    else:
        return 1, 0
    a, b = 1, c
    if _g_last(s0, e0, n0, 1, r, htabs, hrow) <= lam:
        lo = 1
    else:
        while b - a > 1:
            mid = (a + b) // 2
            if _g_last(s0, e0, n0, mid, r, htabs, hrow) <= lam:
                b = mid
            else:
                a = mid
        lo = b
    a, b = c, r - 1
    if _g_last(s0, e0, n0, r - 1, r, htabs, hrow) <= lam:
        hi = r - 1
    else:
        while b - a > 1:
            mid = (a + b) // 2
            if _g_last(s0, e0, n0, mid, r, htabs, hrow) <= lam:
                a = mid
            else:
                b = mid
        hi = a
    return lo, hi


@numba.njit(cache=True)
def _grid_scan(r, objtab, argmins, comps, htabs, hrow, lam, best0):
    m = objtab.shape[0]
    ncons = comps.shape[0]
    best = best0
    ks = np.ones(m, dtype=np.int64)
    last = m - 1
    # Depth-first odometer over the first m-1 coordinates with pruning on
    # the partial objective and partial scores (both only grow with rows).
    depth = 0
    ks[0] = 0
    partial = np.zeros(m + 1)
    while depth >= 0:
        ks[depth] += 1
        if ks[depth] > r - 1:
            depth -= 1
            continue
        partial[depth + 1] = partial[depth] + objtab[depth, ks[depth]]
        if partial[depth + 1] >= best:
            # Objective rows are convex in their coordinate: once past the
            # row minimum, increasing further only makes it worse.
            if ks[depth] > 1 and objtab[depth, ks[depth]] > objtab[depth, ks[depth] - 1]:
                depth -= 1
            continue
        pruned = False
        for c in range(ncons):
            if _g_partial(ks, comps[c], depth + 1, r, htabs, hrow) > lam:
                pruned = True
                break
        if pruned:
            continue
        if depth < last - 1:
            depth += 1
            ks[depth] = 0
            continue
        lo, hi = 1, r - 1
        for c in range(ncons):
            if comps[c, last]:
                n0 = 0
                s0 = 0
                e0 = 0.0
                for t in range(last):
                    if comps[c, t]:
                        n0 += 1
                        s0 += ks[t]
                        e0 += hrow[ks[t]]
                a, b = _feasible_interval(s0, e0, n0, r, htabs, hrow, lam)
                lo = max(lo, a)
                hi = min(hi, b)
        if lo > hi:
            continue
        # The row objective is convex in its grid index, so its minimum over
        # [lo, hi] sits at the clamped unconstrained argmin.
        row = objtab[last]
        j = min(max(argmins[last], lo), hi)
        val = partial[depth + 1] + row[j]
        if val < best:
            best = val
    return best


def grid_oracle_ld(problem: LdProblem) -> float:
    """Exhaustive grid search for binary alphabets and m <= 5.

    Every row parameter ranges over k/r for k = 1..r-1 (a boundary band of
    one grid step is excluded).  Scores are evaluated exactly on the grid
    through entropy tables indexed by integer sums, and the last coordinate
    is handled by locating its contiguous feasible range.
    """
    spec = problem.spec
    if spec.alphabet_size != 2 or spec.m > 5:
        raise ValueError("grid oracle supports binary alphabets with m <= 5 only")
    r = problem.grid_resolution
    p1 = problem.rows[:, 1]
    grid = np.arange(r + 1) / r
    with np.errstate(divide="ignore", invalid="ignore"):
        objtab = np.stack([
            np.nan_to_num(grid * np.log(grid / p) + (1 - grid) * np.log((1 - grid) / (1 - p)),
                          nan=0.0, posinf=np.inf)
            for p in p1])
    argmins = np.array([1 + int(np.argmin(row[1:r])) for row in objtab])
    hrow = _entropy(grid)
    nmax = spec.m
    htabs = np.zeros((nmax + 1, nmax * r + 1))
    for n in range(1, nmax + 1):
        s = np.arange(n * r + 1)
        htabs[n, : n * r + 1] = _entropy(s / (n * r))
    best = math.inf
    for c, d in candidate_pairs(spec, problem.truth, symmetric=False):
        comps = complement_masks(spec.m, [c, d])
        best = min(best, _grid_scan(r, objtab, argmins, comps, htabs, hrow, problem.lam, math.inf))
    return float(best)
