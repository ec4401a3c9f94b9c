import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rfr.simulation import (SimConfig, build_dataset, gen_brownian_covariate, gen_hpp,
                            gen_nhpp_thinning, params_c, rate_a, rate_b, step_intensity)


def test_hpp_examples():
    rng = np.random.default_rng(0)
    assert gen_hpp(0.0, 100, rng).size == 0
    counts = np.array([gen_hpp(0.05, 100, rng).size for _ in range(10_000)])
    assert abs(counts.mean() - 5) < 3 * math.sqrt(5 / counts.size)
    kmax = 12
    obs = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
    probs = stats.poisson.pmf(np.arange(kmax), 5)
    probs = np.append(probs, 1 - probs.sum())
    assert stats.chisquare(obs, probs * counts.size).pvalue > 0.01
    t = gen_hpp(0.5, 50, rng)
    assert np.all(np.diff(t) > 0) and t.max() <= 50
    with pytest.raises(ValueError):
        gen_hpp(-1, 10, rng)


def test_brownian_examples():
    rng = np.random.default_rng(1)
    t, z = gen_brownian_covariate(0.0, 10, 1.0, rng)
    assert np.all(z == 0) and t[0] == 0 and z[0] == 0
    paths = np.array([gen_brownian_covariate(0.1, 101, 1.0, rng)[1] for _ in range(10_000)])
    assert paths[:, 100].var() == pytest.approx(0.01 * 100, rel=0.05)
    a, b = paths[:, 50] - paths[:, 0], paths[:, 100] - paths[:, 50]
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_thinning_examples():
    rng = np.random.default_rng(2)
    const = [gen_nhpp_thinning(lambda t: np.full_like(t, 0.2), 0.2, 50, rng).size for _ in range(4000)]
    assert abs(np.mean(const) - 10) < 3 * math.sqrt(10 / 4000)
    assert gen_nhpp_thinning(lambda t: np.zeros_like(t), 1.0, 50, rng).size == 0
    with pytest.raises(ValueError):
        gen_nhpp_thinning(lambda t: np.full_like(t, 2.0), 1.0, 50, rng)


@settings(max_examples=8)
@given(st.lists(st.floats(0.0, 0.5), min_size=1, max_size=4), st.integers(0, 10 ** 6))
def test_thinning_matches_integrated_intensity(levels, seed):
    rng = np.random.default_rng(seed)
    T = 40.0
    cuts = np.linspace(0, T, len(levels) + 1)[:-1]
    lam = step_intensity(cuts, np.array(levels), lambda v: v)
    target = sum(levels) * T / len(levels)
    n = 2000
    counts = np.array([gen_nhpp_thinning(lam, max(levels) + 1e-9, T, rng).size for _ in range(n)])
    assert abs(counts.mean() - target) <= 4 * math.sqrt(max(target, 1e-3) / n) + 1e-9


def test_scenario_rates():
    assert rate_a(0.25, 0.25) == 0.01
    assert rate_a(0.5, 0.5) == 0.01
    assert rate_a(0.75, 0.75) == 0.1
    assert rate_a(0.75, 0.25) == rate_a(0.25, 0.75) == 0.05
    assert rate_b(np.zeros(10)) == pytest.approx(math.exp(0.01))
    assert params_c(0.75, 0.75) == (0.1, 0.1)
    assert params_c(0.2, 0.4) == (0.01, 0.5)
    assert params_c(0.2, 0.9) == (0.05, 0.0)


def test_class_membership_partitions_square():
    g = np.linspace(0, 1, 101)
    for x1 in g:
        for x2 in g:
            low, high = x1 <= 0.5 and x2 <= 0.5, x1 > 0.5 and x2 > 0.5
            mid = not low and not high
            assert low + high + mid == 1
            assert rate_a(x1, x2) == (0.01 if low else 0.1 if high else 0.05)


@pytest.mark.parametrize("scenario", ["A", "B", "C", "D"])
def test_build_dataset(scenario):
    cfg = SimConfig(n=30, scenario=scenario, seed=5)
    d = build_dataset(cfg)
    assert d.n == 30 and d.p == 10 and all(r.censor_time == 100 for r in d)
    assert d.q == (1 if scenario in "CD" else 0)
    again = build_dataset(cfg)
    assert all(a == b for a, b in zip(d, again))
    assert np.all((d.X >= 0) & (d.X <= 1))


def test_unknown_scenario_rejected():
    with pytest.raises(ValueError, match="A, B, C, D"):
        SimConfig(scenario="E")
