import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from she_lab.errors import ConfigurationError, DomainError
from she_lab.levy_noise import Weight, WeightSpec, uniform_measure
from she_lab.mild_solver import (BumpInitial, ConstantInitial, GridConfig, LinearSigma, NoiseConfig,
                                 SimConfig, TimeConfig, simulate)
from she_lab.moment_analysis import (MomentSeries, averaged_moment, detect_blowup, estimate_moments,
                                     inf_over_grid, jackknife_mean, jensen_check,
                                     kernel_probability_weights, lyapunov_estimate,
                                     weighted_functional)
from she_lab.stable_kernel import GridFunction, KernelSpec, density, semigroup_apply

ONE = Weight.parse("one")
G = KernelSpec(2.0)


def make(lam=0.0, u0=None, dt=5e-3, n_x=64, replicas=20, T=0.5, snaps=6, seed=0):
    noise = NoiseConfig("noncompensated", uniform_measure(1.0, 2.0, 1.0), WeightSpec(ONE, ONE, 1.0, 1.0), lam)
    return SimConfig(G, noise, LinearSigma(ONE), u0 or ConstantInitial(1.0), GridConfig(6.0, n_x),
                     TimeConfig(dt, T, tuple(np.linspace(0, T, snaps))), seed=seed, replicas=replicas)


def series_of(times, x, est):
    est = np.asarray(est, float)
    n = np.full(len(times), 10)
    return MomentSeries(1.0, np.asarray(times, float), np.asarray(x, float), est, np.zeros_like(est), 10, n,
                        np.zeros(len(times)))


def test_jackknife_matches_classical_se():
    rng = np.random.default_rng(0)
    a = rng.normal(size=500)
    m, se = jackknife_mean(a)
    assert m == pytest.approx(a.mean())
    assert se == pytest.approx(a.std(ddof=1) / math.sqrt(a.size), rel=1e-10)
    a[:3] = np.nan
    m, _ = jackknife_mean(a)
    assert m == pytest.approx(np.nanmean(a))


def test_noiseless_moments_are_exact():
    ens = simulate(make(replicas=5))
    s = estimate_moments(ens, 2, probes=[0.0, 1.0])
    np.testing.assert_allclose(s.estimates, 1.0, atol=1e-6)  # box-edge leakage only
    np.testing.assert_allclose(s.stderr, 0.0, atol=1e-12)
    assert not s.censored


def test_noiseless_bump_probe_matches_semigroup():
    ens = simulate(make(u0=BumpInitial(), replicas=2, n_x=192, dt=1e-3))
    s = estimate_moments(ens, 1, probes=[0.0])
    ref = semigroup_apply(G, 0.5, GridFunction.indicator(-1, 1, n=2000), float(s.x[0]))
    assert s.estimates[-1, 0] == pytest.approx(ref, abs=2e-2)


def test_probe_outside_grid():
    ens = simulate(make(replicas=2))
    with pytest.raises(DomainError):
        estimate_moments(ens, 1, probes=[10.0])


def test_inf_over_grid_examples():
    x = np.linspace(-5, 5, 11)
    est = np.full((3, 11), 2.0)
    inf = inf_over_grid(series_of([0, 1, 2], x, est))
    np.testing.assert_allclose(inf.values, 2.0)
    est[:, 6] -= 0.1
    inf = inf_over_grid(series_of([0, 1, 2], x, est))
    np.testing.assert_allclose(inf.values, 1.9)
    np.testing.assert_allclose(inf.argmin, x[6])


def test_inf_for_heat_flowed_bump():
    ens = simulate(make(u0=BumpInitial(), replicas=2, n_x=192, dt=1e-3))
    inf = inf_over_grid(estimate_moments(ens, 1), L=6.0, exclude=0.5)
    x = ens.x[np.abs(ens.x) <= 3.0]
    ref = np.min(semigroup_apply(G, 0.5, GridFunction.indicator(-1, 1, n=2000), x))
    assert inf.values[-1] == pytest.approx(ref, abs=5e-3)


def test_lyapunov_examples():
    t = np.linspace(0, 1, 11)
    fit = lyapunov_estimate((t, np.exp(2 * t)))
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.residual < 1e-12
    fit = lyapunov_estimate((t, np.full(t.size, 3.0)), window=(0, 1))
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DomainError):
        lyapunov_estimate((t, -np.ones(t.size)))


def test_lyapunov_linear_noise():
    cfg = make(lam=0.5, replicas=400, T=1.0, snaps=11, dt=4e-3)
    fit = lyapunov_estimate(averaged_moment(simulate(cfg), 1), window=(0.0, 1.0))
    # lam * int J dnu = 0.5
    assert fit.ci[0] - 0.05 <= 0.5 <= fit.ci[1] + 0.05


def test_weighted_functional_examples():
    x = np.linspace(-20, 20, 4001)
    dx = x[1] - x[0]
    ones = series_of([0.0, 0.5, 1.0], x, np.ones((3, x.size)))
    w = weighted_functional(ones, G, dx=dx)
    np.testing.assert_allclose(w.values, 1.0, atol=1e-6)
    narrow = np.linspace(-1, 1, 201)
    w = weighted_functional(series_of([1.0], narrow, np.ones((1, narrow.size))), G, dx=0.01)
    assert w.values[0] < 1.0
    t = 0.7
    dens = series_of([t], x, density(G, t, x)[None, :])
    w = weighted_functional(dens, G, dx=dx)
    assert w.values[0] == pytest.approx(density(G, 2 * t, 0.0), abs=1e-6)
    empty = series_of([1.0], np.empty(0), np.empty((1, 0)))
    assert weighted_functional(empty, G, dx=0.1).values[0] == 0.0
    with pytest.raises(ConfigurationError):
        weighted_functional(ones, KernelSpec(1.5, 2), dx=dx)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 50.0), min_size=3, max_size=12), st.floats(0.05, 3.0))
def test_jensen_inequality(m, t):
    x = np.linspace(-4, 4, len(m))
    q = kernel_probability_weights(G, t, x, x[1] - x[0])
    lhs, rhs = jensen_check(np.array(m), q, lambda v: v**2)
    assert lhs >= rhs - 1e-9 * max(1.0, abs(rhs))


def test_detect_blowup_noiseless_bounded():
    runs = [simulate(make(dt=dt, n_x=n, replicas=r)) for dt, n, r in ((1e-2, 32, 4), (5e-3, 64, 6), (2.5e-3, 128, 8))]
    rep = detect_blowup(runs, 1)
    assert rep.classification == "bounded"
    assert rep.divergence_time is None
    assert len(rep.as_dict()["evidence"]) == 3


def test_detect_blowup_needs_refined_ladder():
    a = simulate(make(dt=1e-2, n_x=32, replicas=4))
    b = simulate(make(dt=5e-3, n_x=64, replicas=4))
    with pytest.raises(ConfigurationError):
        detect_blowup([a, b])
    with pytest.raises(ConfigurationError):
        detect_blowup([b, a, b])
