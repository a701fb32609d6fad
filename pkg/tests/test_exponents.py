import itertools
import math

import numpy as np
import pytest

from conftest import random_binary_spec, random_spec
from osdlab.divergence import binary_kl, kl
from osdlab.exponents import (cov_linearized, cov_matrix, cov_multi, cov_t_display,
                              equicorrelated_matrix, exponent_report, gd_multi_min,
                              gd_multi_sum_of_kl, gd_single, gd_var_cov_multi, gd_var_multi,
                              homogeneous_gd, info_densities_multi, info_densities_single,
                              p_mix, var_cov_single)
from osdlab.probs import Distribution, ModelSpec, enumerate_outlier_sets

# Frozen from a 30-digit evaluation of the binary closed forms.
GD_BERN_M4 = 0.06592900016867031
V_BERN_M4 = 0.13310260490613667
COV_BERN_M4 = 0.11063937593744819
D_B_04_02 = 0.10464962875290957


def bern_spec(m, p=0.2, q=0.4):
    return ModelSpec.single(m, Distribution.bernoulli(p), Distribution.bernoulli(q))


def test_info_densities_bernoulli(bern_m4):
    i1, _ = info_densities_single(1, bern_m4)
    _, i2 = info_densities_single(0, bern_m4)
    assert i1 == pytest.approx(math.log(1.5), abs=1e-14)
    assert i2 == pytest.approx(math.log(3 * 0.8 / 2.2), abs=1e-14)


def test_info_densities_zero_support():
    spec = ModelSpec.single(4, Distribution([0.5, 0.5, 0.0]), Distribution([0.3, 0.7, 0.0]))
    with pytest.raises(ValueError, match="zero probability"):
        info_densities_single(2, spec)


def test_gd_single_bernoulli(bern_m4):
    assert gd_single(bern_m4) == pytest.approx(GD_BERN_M4, abs=1e-12)


def test_gd_single_matches_binary_form():
    for m in (3, 5, 9):
        p, q = 0.2, 0.4
        mix = ((m - 2) * p + q) / (m - 1)
        expected = binary_kl(q, mix) + (m - 2) * binary_kl(p, mix)
        assert gd_single(bern_spec(m)) == pytest.approx(expected, abs=1e-13)


def test_gd_single_large_m_limit():
    assert abs(gd_single(bern_spec(10_000)) - D_B_04_02) < 1e-3


def test_gd_single_strictly_increasing_in_m():
    values = [gd_single(bern_spec(m)) for m in range(3, 101)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_var_cov_bernoulli(bern_m4):
    var, cov = var_cov_single(bern_m4)
    assert var == pytest.approx(V_BERN_M4, abs=1e-12)
    assert cov == pytest.approx(COV_BERN_M4, abs=1e-12)


def test_cov_equals_simplified_form():
    rng = np.random.default_rng(3)
    for _ in range(20):
        spec = random_spec(rng, int(rng.integers(3, 9)), int(rng.integers(2, 5)))
        var, cov = var_cov_single(spec)
        pn, pa = spec.nominal.probs, spec.anomalous[0].probs
        den = (spec.m - 2) * pn + pa
        i1, i2 = np.log((spec.m - 1) * pa / den), np.log((spec.m - 1) * pn / den)
        v1 = pa @ i1 ** 2 - (pa @ i1) ** 2
        v2 = pn @ i2 ** 2 - (pn @ i2) ** 2
        assert var == pytest.approx(v1 + (spec.m - 2) * v2, abs=1e-12)
        assert cov == pytest.approx(v1 + (spec.m - 3) * v2, abs=1e-12)


def test_requires_m_at_least_three():
    spec = ModelSpec.single(3, Distribution.bernoulli(0.2), Distribution.bernoulli(0.4))
    gd_single(spec)
    with pytest.raises(ValueError):
        gd_single(ModelSpec.homogeneous(5, 2, Distribution.bernoulli(0.2),
                                        Distribution.bernoulli(0.4)))


def _mc_scores(spec, n_draws, rng, truth=1):
    """Per-draw linearised scores S_j, j != truth, for the single-outlier case."""
    m, k = spec.m, spec.alphabet_size
    pn, pa = spec.nominal.probs, spec.anomalous[0].probs
    den = (m - 2) * pn + pa
    i1, i2 = np.log((m - 1) * pa / den), np.log((m - 1) * pn / den)
    x = np.empty((n_draws, m), dtype=int)
    for r in range(m):
        x[:, r] = rng.choice(k, size=n_draws, p=pa if r == truth - 1 else pn)
    contrib = np.where(np.arange(m) == truth - 1, i1[x], i2[x])
    total = contrib.sum(1)
    return np.stack([total - contrib[:, j] for j in range(m) if j != truth - 1], axis=1)


def _within_3se(samples_a, samples_b, target):
    da, db = samples_a - samples_a.mean(), samples_b - samples_b.mean()
    prod = da * db
    se = prod.std() / math.sqrt(prod.size)
    return abs(prod.mean() - target) <= 3 * se + 1e-12


@pytest.mark.parametrize("case", range(20))
def test_var_cov_against_sampling_oracle(case):
    rng = np.random.default_rng(100 + case)
    k = 2 if case < 10 else 3
    spec = random_spec(rng, int(rng.integers(3, 7)), k) if case else bern_spec(5, 0.3, 0.6)
    var, cov = var_cov_single(spec)
    s = _mc_scores(spec, 10 ** 6, rng)
    assert _within_3se(s[:, 0], s[:, 0], var)
    assert _within_3se(s[:, 0], s[:, 1], cov)


def test_cov_matrix_reference_structure(bern_m4):
    mat = cov_matrix(bern_m4)
    assert mat.shape == (3, 3)
    np.testing.assert_allclose(np.diag(mat), 0.1331, atol=5e-5)
    np.testing.assert_allclose(mat[~np.eye(3, dtype=bool)], 0.1106, atol=5e-5)


def test_equicorrelated_eigenvalues():
    for k, var, cov in [(1, 2.0, 0.0), (3, 0.1331, 0.1106), (6, 1.0, -0.1)]:
        mat = equicorrelated_matrix(k, var, cov)
        eig = np.sort(np.linalg.eigvalsh(mat))
        expected = np.sort([var + (k - 1) * cov] + [var - cov] * (k - 1))
        np.testing.assert_allclose(eig, expected, atol=1e-12)
        np.testing.assert_allclose(mat - cov, (var - cov) * np.eye(k), atol=1e-15)
    assert equicorrelated_matrix(1, 0.5, 0.3).tolist() == [[0.5]]


def test_report_invariants():
    rng = np.random.default_rng(7)
    for _ in range(15):
        spec = random_spec(rng, int(rng.integers(3, 8)), int(rng.integers(2, 4)))
        rep = exponent_report(spec)
        rep.check()
        assert rep.gd >= 0 and rep.var >= 0
        assert rep.cov_matrix.shape == (spec.m - 1, spec.m - 1)


# --- multiple outliers ------------------------------------------------------

def test_p_mix_hand_example():
    pn = Distribution([0.7, 0.3])
    a1, a2 = Distribution([0.2, 0.8]), Distribution([0.5, 0.5])
    spec = ModelSpec(5, pn, (a1, a2))
    np.testing.assert_allclose(p_mix((1, 2), (1, 3), spec), (a2.probs + 2 * pn.probs) / 3)
    i1, i2 = info_densities_multi(1, (1, 2), (1, 3), spec)
    mix1 = (0.5 + 2 * 0.3) / 3
    assert i1[1] == pytest.approx(math.log(0.5 / mix1))
    assert i2 == pytest.approx(math.log(0.3 / mix1))


def test_multi_rejects_equal_sets(bern_m6_t2):
    with pytest.raises(ValueError, match="differ"):
        gd_var_multi((1, 2), (1, 2), bern_m6_t2)


def test_multi_densities_reduce_to_single():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        spec = random_binary_spec(rng, int(rng.integers(3, 8)))
        i, j = rng.choice(np.arange(1, spec.m + 1), 2, replace=False)
        x = int(rng.integers(0, 2))
        a, b = info_densities_single(x, spec)
        i1, i2 = info_densities_multi(x, (int(i),), (int(j),), spec)
        assert i1[0] == pytest.approx(a, abs=1e-12)
        assert i2 == pytest.approx(b, abs=1e-12)


def test_multi_moments_reduce_to_single():
    rng = np.random.default_rng(12)
    for _ in range(40):
        spec = random_binary_spec(rng, int(rng.integers(3, 8)))
        gd = gd_single(spec)
        var, cov = var_cov_single(spec)
        for i, j in itertools.permutations(range(1, spec.m + 1), 2):
            g, v, c = gd_var_cov_multi((i,), (j,), spec)
            assert g == pytest.approx(gd, abs=1e-12)
            assert v == pytest.approx(var, abs=1e-12)
            assert c == pytest.approx(cov, abs=1e-12)
        others = [(d,) for d in range(1, spec.m + 1) if d not in (1, 2)]
        for d in others:
            assert cov_t_display((1,), (2,), d, spec) == pytest.approx(cov, abs=1e-12)


def test_all_equal_distributions_give_zero():
    # ModelSpec forbids P_A = P_N, so compare against nearly equal rows.
    spec = ModelSpec.homogeneous(6, 2, Distribution([0.5, 0.5]),
                                 Distribution([0.5 + 1e-9, 0.5 - 1e-9]))
    g, v, c = gd_var_cov_multi((1, 2), (3, 4), spec)
    assert abs(g) < 1e-15 and abs(v) < 1e-15 and abs(c) < 1e-15


def test_gd_multi_matches_sum_of_kl():
    rng = np.random.default_rng(5)
    for _ in range(10):
        spec = random_spec(rng, 7, 3, t=3)
        for b, c in [((1, 2, 3), (1, 2, 4)), ((2, 4, 6), (1, 3, 5)), ((1, 5, 7), (2, 5, 7))]:
            assert gd_var_multi(b, c, spec)[0] == pytest.approx(
                gd_multi_sum_of_kl(b, c, spec), abs=1e-12)


def test_homogeneous_overlap_one(bern_m6_t2):
    pn, pa = np.array([0.8, 0.2]), np.array([0.6, 0.4])
    mix = (pa + 3 * pn) / 4
    direct = kl(pa, mix) + 3 * kl(pn, mix)
    assert homogeneous_gd(6, 2, 1, pn, pa) == pytest.approx(direct, abs=1e-14)
    assert gd_var_multi((1, 2), (1, 3), bern_m6_t2)[0] == pytest.approx(direct, abs=1e-13)
    assert direct == pytest.approx(0.07512164085141333, abs=1e-13)


def test_homogeneous_reduces_to_single(bern_m4):
    assert homogeneous_gd(4, 1, 1, [0.8, 0.2], [0.6, 0.4]) == pytest.approx(GD_BERN_M4, abs=1e-13)


def test_homogeneous_range_errors():
    with pytest.raises(ValueError):
        homogeneous_gd(4, 2, 1, [0.8, 0.2], [0.6, 0.4])
    with pytest.raises(ValueError):
        homogeneous_gd(6, 2, 3, [0.8, 0.2], [0.6, 0.4])


@pytest.mark.parametrize("t_out,t_ov", [(1, 1), (2, 1), (2, 2), (3, 2)])
def test_homogeneous_increasing_in_m(t_out, t_ov):
    ms = range(max(5, 2 * t_out + 1), 51)
    values = [homogeneous_gd(m, t_out, t_ov, [0.8, 0.2], [0.6, 0.4]) for m in ms]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_gd_multi_min_homogeneous():
    pn, pa = Distribution.bernoulli(0.2), Distribution.bernoulli(0.4)
    for m, t in [(5, 2), (6, 2), (7, 3), (8, 3)]:
        spec = ModelSpec.homogeneous(m, t, pn, pa)
        gd, pair = gd_multi_min(spec)
        expected = min(homogeneous_gd(m, t, s, pn, pa) for s in range(1, t + 1))
        assert gd == pytest.approx(expected, abs=1e-13)
        pairs = list(itertools.permutations(enumerate_outlier_sets(m, t), 2))
        values = [gd_var_multi(b, c, spec)[0] for b, c in sorted(pairs)]
        first = sorted(pairs)[int(np.argmin(np.round(values, 13)))]
        assert pair == first


def test_gd_multi_min_t1_equals_single(bern_m4):
    assert gd_multi_min(bern_m4)[0] == pytest.approx(gd_single(bern_m4), abs=1e-14)


def test_gd_multi_monotone_in_m_and_t():
    pn, pa = Distribution.bernoulli(0.2), Distribution.bernoulli(0.4)
    g62 = gd_multi_min(ModelSpec.homogeneous(6, 2, pn, pa))[0]
    g72 = gd_multi_min(ModelSpec.homogeneous(7, 2, pn, pa))[0]
    g82 = gd_multi_min(ModelSpec.homogeneous(8, 2, pn, pa))[0]
    g83 = gd_multi_min(ModelSpec.homogeneous(8, 3, pn, pa))[0]
    assert g72 > g62
    assert g83 < g82


def test_gd_depends_on_overlap_only(bern_m6_t2):
    by_overlap = {}
    for b, c in itertools.permutations(enumerate_outlier_sets(6, 2), 2):
        by_overlap.setdefault(len(set(b) - set(c)), []).append(gd_var_multi(b, c, bern_m6_t2))
    for values in by_overlap.values():
        values = np.array(values)
        np.testing.assert_allclose(values, np.broadcast_to(values[0], values.shape), atol=1e-13)


def test_display_matches_linearised_when_overlaps_agree(bern_m6_t2):
    b, c = (1, 2), (1, 3)
    for d in enumerate_outlier_sets(6, 2):
        if d in (b, c) or len(set(b) & set(d)) != len(set(b) & set(c)):
            continue
        assert cov_t_display(b, c, d, bern_m6_t2) == pytest.approx(
            cov_linearized(b, c, d, bern_m6_t2), abs=1e-12)


def _mc_multi_scores(spec, b, sets, n_draws, rng):
    rows = spec.row_distributions(__import__("osdlab").probs.Multi(b))
    x = np.stack([rng.choice(spec.alphabet_size, size=n_draws, p=rows[r])
                  for r in range(spec.m)], axis=1)
    out = []
    for c in sets:
        mix = p_mix(b, c, spec)
        keep = [r for r in range(spec.m) if r + 1 not in c]
        out.append(sum(np.log(rows[r][x[:, r]] / mix[x[:, r]]) for r in keep))
    return out


@pytest.mark.parametrize("seed", range(4))
def test_multi_covariance_against_sampling_oracle(seed):
    rng = np.random.default_rng(200 + seed)
    spec = random_spec(rng, 6, 2 + seed % 2, t=2)
    b, c = (1, 2), (1, 3)
    ds = [(2, 4), (3, 4), (4, 5)]
    s_c, *s_ds = _mc_multi_scores(spec, b, [c] + ds, 10 ** 6, rng)
    _, var = gd_var_multi(b, c, spec)
    assert _within_3se(s_c, s_c, var)
    for d, s_d in zip(ds, s_ds):
        assert _within_3se(s_c, s_d, cov_linearized(b, c, d, spec))


def test_cov_multi_is_average_over_third_sets(bern_m6_t2):
    b, c = (1, 2), (1, 3)
    ds = [d for d in enumerate_outlier_sets(6, 2) if d not in (b, c)]
    expected = np.mean([cov_linearized(b, c, d, bern_m6_t2) for d in ds])
    assert cov_multi(b, c, bern_m6_t2) == pytest.approx(expected, abs=1e-15)


def test_multi_report_matrix(bern_m6_t2):
    rep = exponent_report(bern_m6_t2)
    assert rep.cov_matrix.shape == (14, 14)
    assert rep.pair_key == ((1, 2), (1, 3))
    rep.check()
