import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cramer_attack.cramer import (
    CramerConfig,
    CriticFunction,
    DiscrepancyObjective,
    cramer2_distance,
    empirical_cdf,
    energy_distance,
    ipm_discrepancy,
    ipm_gradient,
    pooled_reference,
    reservoir_indices,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
samples = st.lists(finite, min_size=1, max_size=30)


def brute_energy(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    xy = np.abs(x[:, None] - y[None, :]).mean()
    xx = np.abs(x[:, None] - x[None, :]).mean()
    yy = np.abs(y[:, None] - y[None, :]).mean()
    return 2 * xy - xx - yy


def grid_cramer2(x, y, n=200001):
    # Riemann sum of the squared CDF gap on a dense grid
    lo, hi = min(np.min(x), np.min(y)), max(np.max(x), np.max(y))
    t = np.linspace(lo, hi, n)
    fx = (np.asarray(x)[None, :] <= t[:, None]).mean(axis=1)
    fy = (np.asarray(y)[None, :] <= t[:, None]).mean(axis=1)
    return float(np.sum((fx - fy)[:-1] ** 2 * np.diff(t)))


def test_cdf_right_continuous():
    d = empirical_cdf([0.0, 1.0, 1.0, 2.0])
    assert d.cdf(1.0) == pytest.approx(0.75)
    assert d.cdf_left(1.0) == pytest.approx(0.25)
    assert d.cdf(-1.0) == 0.0 and d.cdf(5.0) == 1.0


def test_empty_sample_rejected():
    with pytest.raises(ValueError):
        empirical_cdf([])


def test_two_deltas():
    p, q = empirical_cdf([0.0]), empirical_cdf([1.0])
    assert cramer2_distance(p, q) == pytest.approx(1.0)
    assert energy_distance(p, q) == pytest.approx(2.0)


def test_cramer2_matches_grid_integral():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=40), rng.normal(0.5, 2.0, size=25)
    exact = cramer2_distance(empirical_cdf(x), empirical_cdf(y))
    assert exact == pytest.approx(grid_cramer2(x, y), rel=1e-3)


def test_energy_matches_scipy_weighted():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=30), rng.laplace(size=17)
    u, v = rng.uniform(0.1, 1, 30), rng.uniform(0.1, 1, 17)
    ours = energy_distance(empirical_cdf(x, u), empirical_cdf(y, v))
    ref = stats.energy_distance(x, y, u, v) ** 2
    assert ours == pytest.approx(ref, rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(samples, samples)
def test_two_routes_agree(x, y):
    p, q = empirical_cdf(x), empirical_cdf(y)
    c2 = cramer2_distance(p, q)
    assert c2 == pytest.approx(0.5 * brute_energy(x, y), abs=1e-9)
    assert c2 == pytest.approx(0.5 * energy_distance(p, q), abs=1e-9)
    assert DiscrepancyObjective(p).value(y) == pytest.approx(c2, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(samples, samples, finite)
def test_cramer2_properties(x, y, c):
    p, q = empirical_cdf(x), empirical_cdf(y)
    d = cramer2_distance(p, q)
    assert d >= 0
    assert d == pytest.approx(cramer2_distance(q, p), abs=1e-12)
    assert cramer2_distance(p, p) == 0.0
    assert cramer2_distance(p.shifted(c), q.shifted(c)) == pytest.approx(d, abs=1e-7)


@settings(max_examples=200, deadline=None)
@given(samples, samples, st.floats(-1, 1))
def test_critic_bounded(x, y, mu):
    p, q = empirical_cdf(x), empirical_cdf(y)
    f = CriticFunction(p, q, mu)
    t = np.linspace(-11, 11, 50)
    vals = f(t)
    assert np.all(np.diff(vals) >= -1e-12) or mu < 0
    d = ipm_discrepancy(p, q, mu)
    assert 0 <= d <= 1 + abs(mu) + 1e-12
    assert ipm_discrepancy(p, p, mu) == pytest.approx(0.0, abs=1e-12)


def test_critic_delta_pair():
    p, q = empirical_cdf([0.0]), empirical_cdf([1.0])
    for mu in (-1.0, -0.3, 0.0, 0.5, 1.0):
        assert ipm_discrepancy(p, q, mu) == pytest.approx(abs(mu))


def test_mu_out_of_range():
    p = empirical_cdf([0.0])
    with pytest.raises(ValueError):
        CriticFunction(p, p, 1.5)


def test_gradient_finite_differences():
    rng = np.random.default_rng(5)
    ref = empirical_cdf(rng.normal(size=200))
    y = rng.normal(0.3, 1.5, size=64)
    g = ipm_gradient(y, ref)
    h = 1e-7
    for j in range(len(y)):
        yp, ym = y.copy(), y.copy()
        yp[j] += h
        ym[j] -= h
        fd = (cramer2_distance(ref, empirical_cdf(yp)) - cramer2_distance(ref, empirical_cdf(ym))) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-3, abs=1e-9)


def test_gradient_zero_at_coincidence():
    p = empirical_cdf([0.25])
    assert ipm_gradient([0.25], p)[0] == 0.0
    assert ipm_gradient([0.25], p, CramerConfig(mode="critic"), mu=0.4)[0] == 0.0


def test_descent_reduces_distance():
    rng = np.random.default_rng(6)
    ref = empirical_cdf(rng.normal(size=500))
    y = rng.normal(2.0, 0.5, size=100)
    before = cramer2_distance(ref, empirical_cdf(y))
    y2 = y - 5.0 * ipm_gradient(y, ref)
    assert cramer2_distance(ref, empirical_cdf(y2)) < before


def test_critic_gradient_direction():
    rng = np.random.default_rng(7)
    ref = empirical_cdf(rng.normal(size=400))
    y = rng.normal(1.5, 0.3, size=60)
    cfg = CramerConfig(mode="critic")
    g = ipm_gradient(y, ref, cfg, mu=0.0)
    # candidate sits to the right of the reference: pushing it left shrinks the gap
    assert np.all(g >= 0) and np.any(g > 0)
    obj = DiscrepancyObjective(ref, cfg)
    step = y - 0.2 * g / np.max(np.abs(g))
    assert obj.value(step, 0.0) < obj.value(y, 0.0)


def test_reservoir():
    rng = np.random.default_rng(0)
    idx = reservoir_indices(1000, 100, rng)
    assert idx.shape == (100,) and len(np.unique(idx)) == 100
    assert np.all(np.diff(idx) > 0) and idx.max() < 1000
    again = reservoir_indices(1000, 100, np.random.default_rng(0))
    np.testing.assert_array_equal(idx, again)
    np.testing.assert_array_equal(reservoir_indices(50, 100, rng), np.arange(50))


def test_reservoir_uniform():
    counts = np.zeros(20)
    for s in range(2000):
        counts[reservoir_indices(20, 5, np.random.default_rng(s))] += 1
    # each index kept with probability 1/4
    _, pval = stats.chisquare(counts, np.full(20, counts.sum() / 20))
    assert pval > 1e-3


def test_pooled_reference_weights():
    a, b = np.zeros(10), np.ones(30)
    ref = pooled_reference([a, b], cap=1000)
    assert ref.cdf(0.0) == pytest.approx(0.5)
    capped = pooled_reference([a, b], cap=8, seed=1)
    assert len(capped) == 8
    assert capped.weights.sum() == pytest.approx(1.0)


def test_uniform_pair_vs_midpoint():
    assert cramer2_distance(empirical_cdf([0.0, 1.0]), empirical_cdf([0.5])) == pytest.approx(0.25)


def test_critic_boundaries():
    p, q = empirical_cdf([0.0, 2.0]), empirical_cdf([1.0])
    f = CriticFunction(p, q, 0.3)
    assert f(-1.0) == 0.0
    assert f(3.0) == pytest.approx(1.3)
    f0 = CriticFunction(p, q, 0.0)
    t = np.linspace(-1, 3, 17)
    np.testing.assert_array_equal(f0(t), p.cdf(t))


def test_single_step_between_deltas():
    ref, y = empirical_cdf([0.0]), np.array([1.0])
    g = ipm_gradient(y, ref)
    assert g[0] > 0
    assert cramer2_distance(ref, empirical_cdf(y - 0.5 * g)) < cramer2_distance(ref, empirical_cdf(y))


def test_discrepancy_shift_invariant():
    rng = np.random.default_rng(8)
    p, q = empirical_cdf(rng.normal(size=30)), empirical_cdf(rng.normal(size=20))
    for mu in (-0.7, 0.0, 0.9):
        assert ipm_discrepancy(p.shifted(3.5), q.shifted(3.5), mu) == pytest.approx(ipm_discrepancy(p, q, mu))


@settings(max_examples=150, deadline=None)
@given(samples, samples, samples)
def test_energy_root_triangle(x, y, z):
    a, b, c = empirical_cdf(x), empirical_cdf(y), empirical_cdf(z)
    d = lambda u, v: np.sqrt(max(energy_distance(u, v), 0.0))
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-9


@settings(max_examples=100, deadline=None)
@given(samples)
def test_cdf_against_counting(x):
    d = empirical_cdf(x)
    t = np.concatenate([np.asarray(x), np.linspace(-11, 11, 23)])
    naive = (np.asarray(x)[None, :] <= t[:, None]).mean(axis=1)
    np.testing.assert_allclose(d.cdf(t), naive, atol=1e-12)


def test_pooled_reference_deterministic():
    rng = np.random.default_rng(9)
    sig = [rng.normal(size=500) for _ in range(4)]
    a, b = pooled_reference(sig, cap=300, seed=2), pooled_reference(sig, cap=300, seed=2)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.weights, b.weights)
