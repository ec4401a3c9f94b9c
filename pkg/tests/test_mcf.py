import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import rec, to_records
from rfr.mcf import (StepFunction, evaluate, local_mcf, local_mcf_variance, mcf_covariance,
                     mcf_covariance_matrix, merge_mcf)
from rfr.simulation import gen_hpp


def test_single_system_counts_failures():
    est = local_mcf([rec(1, [1, 2], 10)])
    assert list(est.mcf.knots) == [1, 2] and list(est.mcf.values) == [1, 2]
    assert np.all(est.variance.values == 0)


def test_two_system_example(ab_shard):
    est = local_mcf(ab_shard)
    assert list(est.mcf.knots) == [2, 3, 5]
    assert np.allclose(est.mcf.values, [0.5, 1.0, 2.0])
    assert est.variance(2) == pytest.approx(0.125)


def test_zero_failures_is_zero_function():
    est = local_mcf([rec(1, [], 5), rec(2, [], 7)])
    assert len(est.mcf) == 0 and est.mcf(3.0) == 0.0


def test_identical_systems_have_zero_variance():
    v = local_mcf_variance([rec(1, [1, 4], 9), rec(2, [1, 4], 9)])
    assert np.all(v.values == 0)


def test_covariance_examples(ab_shard):
    var = local_mcf_variance(ab_shard)
    for j in range(3):
        assert mcf_covariance(ab_shard, j, j) == pytest.approx(var.values[j])
    assert mcf_covariance([rec(1, [1, 3], 5)], 0, 1) == 0.0
    systems = [([2.0, 5.0], 10.0), ([3.0], 4.0)]
    assert mcf_covariance(ab_shard, 1, 2) == pytest.approx(oracles.mcf_covariance(systems, 1, 2),
                                                           abs=1e-14)


def test_evaluate_is_right_continuous():
    s = StepFunction([2, 3], [0.5, 1.0])
    assert evaluate(s, 2.5) == 0.5 and evaluate(s, 1) == 0 and evaluate(s, 3) == 1.0
    assert np.array_equal(evaluate(s, [0, 2, 3.5]), [0, 0.5, 1.0])


def test_step_function_json_roundtrip():
    s = StepFunction([0.1, 2.5], [1 / 3, 2.0])
    assert StepFunction.from_json(s.to_json()) == s
    with pytest.raises(ValueError):
        StepFunction([2, 1], [0, 1])


def test_merge_examples():
    one = local_mcf([rec(1, [1], 10)])
    two = local_mcf([rec(2, [2, 2], 10)])
    assert merge_mcf([one]) is one
    m = merge_mcf([one, two])
    assert m.mcf(1.5) == 0.5 and m.mcf(2) == 1.5
    same = merge_mcf([two, two, two])
    assert np.allclose(same.mcf.values, two.mcf.values)
    assert np.allclose(same.variance.values, two.variance.values / 3)
    with pytest.raises(ValueError):
        merge_mcf([])


def test_oracle_agreement_random(rng):
    for _ in range(50):
        systems = oracles.random_systems(rng, integer_times=False)
        recs = to_records(systems)
        est = local_mcf(recs)
        t, v = oracles.mcf(systems)
        assert np.allclose(est.mcf.knots, t, rtol=0, atol=0)
        assert np.allclose(est.mcf.values, v, rtol=0, atol=1e-12)
        assert np.allclose(est.variance.values, oracles.mcf_variance(systems), atol=1e-12)


systems_st = st.lists(
    st.tuples(st.lists(st.integers(1, 8), max_size=5), st.integers(4, 9)), min_size=1, max_size=8
).filter(lambda s: any(ft for ft, _ in s))


def _recs(systems):
    return [rec(i, sorted(ft), max(c, max(ft, default=0))) for i, (ft, c) in enumerate(systems)]


@given(systems_st)
def test_mcf_monotone_and_variance_nonnegative(systems):
    est = local_mcf(_recs(systems))
    assert np.all(np.diff(est.mcf.values) >= 0) and np.all(est.mcf.values >= 0)
    assert np.all(est.variance.values >= 0)
    assert np.array_equal(est.variance.knots, est.mcf.knots)


@given(systems_st)
def test_covariance_symmetric(systems):
    M = mcf_covariance_matrix(_recs(systems))
    assert np.array_equal(M, M.T)


@given(systems_st)
def test_single_worker_merge_is_identity(systems):
    est = local_mcf(_recs(systems))
    assert merge_mcf([est]) == est


def test_hpp_mcf_is_roughly_linear():
    rng = np.random.default_rng(0)
    recs = [rec(i, gen_hpp(0.05, 100, rng), 100) for i in range(400)]
    assert local_mcf(recs)(50.0) == pytest.approx(2.5, rel=0.1)
