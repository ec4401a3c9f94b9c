import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import rec
from rfr.data import DataError, SystemRecord
from rfr.nhpp import (DegenerateNodeError, IntensityModel, cumulative_intensity,
                      fit_intensity, intensity_at, nll_gradient, omega_max, penalized_nll,
                      predict_cumulative_hazard, select_omega)
from rfr.simulation import gen_brownian_covariate, gen_nhpp_thinning, step_intensity

TWO_SEG = (([0.0, 2.0], [1.0, 3.0]),)


def test_intensity_at_examples():
    r = rec(1, [], 10, series=(([0.0], [2.0]),))
    assert intensity_at(IntensityModel(0.0, [0.0]), r, 3.0) == 1.0
    assert intensity_at(IntensityModel(math.log(0.05), []), rec(2, [], 10), 1.0) == pytest.approx(0.05)
    assert intensity_at(IntensityModel(math.log(0.01), [0.5]), r, 4.0) == pytest.approx(0.01 * math.e)


def test_cumulative_intensity_examples():
    const = IntensityModel(math.log(0.05), [])
    r = rec(1, [], 100)
    assert cumulative_intensity(const, r, 0.0) == 0.0
    assert cumulative_intensity(const, r, 100.0) == pytest.approx(5.0)
    two = rec(2, [], 5, series=TWO_SEG)
    m = IntensityModel(0.0, [1.0])
    assert cumulative_intensity(m, two, 5.0) == pytest.approx(2 * math.e + 3 * math.e ** 3)
    curve = predict_cumulative_hazard(const, r, [0, 50, 100])
    assert np.allclose(curve, [0, 2.5, 5])
    assert np.array_equal(predict_cumulative_hazard(m, two, [0.0]), [0.0])
    assert predict_cumulative_hazard(m, two, [0, 5])[-1] == pytest.approx(2 * math.e + 3 * math.e ** 3)
    with pytest.raises(DataError):
        cumulative_intensity(m, two, 6.0)


def test_poisson_closed_forms():
    r = rec(1, [1, 2, 7], 10)
    for b0 in (-2.0, 0.0, 0.3):
        assert penalized_nll([b0], [r]) == pytest.approx(math.exp(b0) * 10 - 3 * b0)
    b0 = math.log(3 / 10)
    assert penalized_nll([b0], [r]) == pytest.approx(3 - 3 * math.log(3 / 10))
    assert nll_gradient([b0], [r])[0] == pytest.approx(0.0, abs=1e-12)
    g = nll_gradient([0.4], [rec(2, [], 10)])
    assert g[0] > 0


def _random_systems(rng, n=6, q=2):
    out = []
    for i in range(n):
        c = float(rng.uniform(3, 10))
        chans = []
        for _ in range(q):
            ts = np.concatenate([[0.0], np.sort(rng.uniform(0.1, c, size=3))])
            chans.append((ts, rng.normal(size=ts.size)))
        ft = np.sort(rng.uniform(0, c, size=rng.integers(0, 4)))
        out.append((ft, c, chans))
    return out


def _records(systems):
    return [SystemRecord(str(i), ft, c, [0.5], tuple(ch)) for i, (ft, c, ch) in enumerate(systems)]


def test_nll_matches_direct_summation(rng):
    for _ in range(25):
        systems = _random_systems(rng)
        params = rng.normal(scale=0.5, size=3)
        got = penalized_nll(params, _records(systems))
        want = oracles.nll(params[0], params[1:], systems)
        assert got == pytest.approx(want, rel=1e-10, abs=1e-10)
    params = np.array([0.1, -0.5, 0.25])
    recs = _records(systems)
    assert penalized_nll(params, recs, omega=2.0) == pytest.approx(
        penalized_nll(params, recs) + 2.0 * 0.75)


def test_gradient_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        recs = _records(_random_systems(rng))
        x = rng.normal(scale=0.5, size=3)
        g = nll_gradient(x, recs)
        h = 1e-6
        fd = np.array([(penalized_nll(x + h * e, recs) - penalized_nll(x - h * e, recs)) / (2 * h)
                       for e in np.eye(3)])
        worst = max(worst, np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(g))))
    assert worst < 1e-5


def test_hpp_fit_closed_form():
    recs = [rec(i, f, c) for i, (f, c) in enumerate([([1, 2], 10), ([], 7), ([3, 4, 5], 8)])]
    m = fit_intensity(recs)
    assert m.beta0 == pytest.approx(math.log(5 / 25), abs=1e-12)
    with pytest.raises(DegenerateNodeError):
        fit_intensity([rec(1, [], 5)])


def test_heavy_penalty_zeroes_slopes(rng):
    recs = _records(_random_systems(rng, n=20))
    m = fit_intensity(recs, omega=1e6)
    assert np.all(m.beta == 0)
    r = sum(x.n_failures for x in recs)
    C = sum(x.censor_time for x in recs)
    assert m.raw_coefficients()[0] == pytest.approx(math.log(r / C), abs=1e-10)


def test_lasso_path_is_monotone(rng):
    recs = _records(_random_systems(rng, n=40, q=3))
    top = omega_max(recs)
    norms = [np.abs(fit_intensity(recs, w).beta).sum() for w in np.linspace(0, 1.2 * top, 12)]
    assert all(a >= b - 1e-8 for a, b in zip(norms, norms[1:]))
    assert norms[-1] == 0.0


def test_recovers_known_coefficients():
    rng = np.random.default_rng(11)
    b0, b1 = math.log(0.05), 0.8
    recs = []
    for i in range(200):
        zt, zv = gen_brownian_covariate(0.3, 100, 1.0, rng)
        lam = step_intensity(zt, zv, lambda z: np.exp(b0 + b1 * z))
        ft = gen_nhpp_thinning(lam, float(np.max(np.exp(b0 + b1 * zv))) * 1.05, 100, rng)
        recs.append(SystemRecord(str(i), ft, 100, [0.5], ((zt, zv),)))
    m = fit_intensity(recs, 0.0)
    c0, c1 = m.raw_coefficients()
    est = np.array([c0, c1[0]])
    # observed information by differencing the analytic gradient
    h = 1e-5
    H = np.array([(nll_gradient(est + h * e, recs) - nll_gradient(est - h * e, recs)) / (2 * h)
                  for e in np.eye(2)])
    se = np.sqrt(np.diag(np.linalg.inv(H)))
    assert abs(est[0] - b0) < 3 * se[0] and abs(est[1] - b1) < 3 * se[1]


def test_select_omega_in_grid(rng):
    recs = _records(_random_systems(rng, n=40, q=2))
    w = select_omega(recs, seed=0)
    top = omega_max(recs)
    assert top * 1e-3 * (1 - 1e-9) <= w <= top * (1 + 1e-9)
    assert select_omega([rec(1, [1], 5)]) == 0.0


def test_model_json_roundtrip():
    m = IntensityModel(-1.5, [0.25, 0.0], 0.1, [0.5, 1.0], [2.0, 1.0])
    back = IntensityModel.from_json(m.to_json())
    assert back.beta0 == m.beta0 and np.array_equal(back.beta, m.beta) and back.omega == 0.1
    assert np.array_equal(back.center, m.center) and np.array_equal(back.scale, m.scale)


params_st = st.lists(st.floats(-2, 2), min_size=3, max_size=3)


@given(params_st, params_st, st.floats(0.01, 0.99))
def test_nll_is_convex(a, b, alpha):
    recs = _records(_random_systems(np.random.default_rng(5)))
    a, b = np.array(a), np.array(b)
    mix = penalized_nll(alpha * a + (1 - alpha) * b, recs, omega=0.3)
    bound = alpha * penalized_nll(a, recs, omega=0.3) + (1 - alpha) * penalized_nll(b, recs, omega=0.3)
    assert mix <= bound + 1e-9 * max(1.0, abs(bound))


@given(st.floats(0, 10), st.floats(0, 10), st.floats(-1, 1))
def test_cumulative_monotone_and_additive(s, t, beta):
    s, t = sorted((s, t))
    r = rec(1, [], 10, series=(([0.0, 1.5, 4.0, 7.5], [0.3, -1.0, 2.0, 0.1]),))
    m = IntensityModel(-0.5, [beta])
    a, b = cumulative_intensity(m, r, s), cumulative_intensity(m, r, t)
    assert a <= b + 1e-12
    # integral over [s, t] equals the segment-by-segment sum
    pts = sorted({s, t} | {x for x in (1.5, 4.0, 7.5) if s < x < t})
    piece = sum((q - p) * intensity_at(m, r, p) for p, q in zip(pts[:-1], pts[1:]))
    assert b - a == pytest.approx(piece, rel=1e-9, abs=1e-12)
