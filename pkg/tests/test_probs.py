import numpy as np
import pytest
from hypothesis import given, strategies as st

from osdlab.probs import (REJECT, Distribution, EmpiricalType, Hypothesis, ModelSpec, Multi,
                          SequenceBatch, Single, empirical_type, enumerate_outlier_sets,
                          parse_hypothesis, set_rank)


def test_distribution_validation():
    Distribution([0.5, 0.5])
    with pytest.raises(ValueError):
        Distribution([0.5, 0.6])
    with pytest.raises(ValueError):
        Distribution([1.2, -0.2])
    with pytest.raises(ValueError):
        Distribution([1.0])


def test_distribution_equality_tolerance():
    assert Distribution([0.3, 0.7]) == Distribution([0.3 + 1e-13, 0.7 - 1e-13])
    assert Distribution([0.3, 0.7]) != Distribution([0.31, 0.69])
    assert Distribution.bernoulli(0.2) == Distribution([0.8, 0.2])


def test_empirical_type_counts():
    t = empirical_type([0, 1, 1, 2, 1], 3)
    assert isinstance(t, EmpiricalType)
    assert t.counts.tolist() == [1, 3, 1]
    assert t.n == 5
    np.testing.assert_allclose(t.probs, [0.2, 0.6, 0.2])


def test_empirical_type_errors():
    with pytest.raises(ValueError, match="empty"):
        empirical_type([], 2)
    with pytest.raises(ValueError, match="position 2"):
        empirical_type([0, 1, 5], 2)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=60))
def test_type_is_permutation_invariant(xs):
    a = empirical_type(xs, 4)
    b = empirical_type(list(reversed(xs)), 4)
    assert a.counts.tolist() == b.counts.tolist()
    assert a.counts.sum() == len(xs)


def test_batch_alphabet_check_reports_location():
    batch = SequenceBatch(np.array([[0, 1, 0], [1, 2, 0]]))
    with pytest.raises(ValueError, match="row 2, column 2"):
        batch.check_alphabet(2)
    assert batch.m == 2 and batch.n == 3


def test_batch_rejects_bad_shapes():
    with pytest.raises(ValueError):
        SequenceBatch(np.zeros((2, 0), dtype=int))
    with pytest.raises(ValueError):
        SequenceBatch(np.array([[0, -1]]))


def test_hypothesis_labels_and_parse():
    assert Single(2).label() == "H_2"
    assert Multi([3, 1]).label() == "H_{1,3}"
    assert REJECT.label() == "H_r"
    assert parse_hypothesis("1,3") == Multi([1, 3])
    assert parse_hypothesis("r").is_reject
    assert parse_hypothesis("H_2") == Single(2)


def test_hypothesis_checks():
    with pytest.raises(ValueError, match="ill-posed"):
        Multi([1, 2]).check(4)
    with pytest.raises(ValueError, match="out of range"):
        Single(5).check(4)
    Multi([1, 2]).check(5, 2)


@pytest.mark.parametrize("m,t,count", [(4, 1, 4), (5, 2, 10), (6, 2, 15), (7, 3, 35)])
def test_enumerate_outlier_sets(m, t, count):
    sets = enumerate_outlier_sets(m, t)
    assert len(sets) == count
    assert sets == sorted(sets)
    assert all(len(s) == t for s in sets)


def test_enumerate_ill_posed():
    with pytest.raises(ValueError, match="ill-posed"):
        enumerate_outlier_sets(4, 2)


def test_set_rank():
    assert [set_rank(i, (5, 2, 7)) for i in (2, 5, 7)] == [1, 2, 3]
    with pytest.raises(ValueError):
        set_rank(3, (1, 2))


def test_model_spec_validation():
    pn, pa = Distribution.bernoulli(0.2), Distribution.bernoulli(0.4)
    with pytest.raises(ValueError, match="indistinguishable"):
        ModelSpec.single(4, pn, pn)
    with pytest.raises(ValueError, match="ill-posed"):
        ModelSpec.homogeneous(4, 2, pn, pa)
    with pytest.raises(ValueError, match="alphabet"):
        ModelSpec.single(4, pn, Distribution([0.2, 0.3, 0.5]))


def test_row_distributions_follow_set_rank():
    pn = Distribution([0.5, 0.5])
    a1, a2 = Distribution([0.9, 0.1]), Distribution([0.1, 0.9])
    spec = ModelSpec(5, pn, (a1, a2))
    rows = spec.row_distributions(Multi([4, 2]))
    np.testing.assert_allclose(rows[1], a1.probs)
    np.testing.assert_allclose(rows[3], a2.probs)
    np.testing.assert_allclose(rows[[0, 2, 4]], 0.5)
    np.testing.assert_allclose(spec.row_distributions(REJECT), 0.5)
