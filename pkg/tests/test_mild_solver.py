import dataclasses
import math

import numpy as np
import pytest

from she_lab.errors import ConfigurationError, DomainError
from she_lab.levy_noise import Weight, WeightSpec, uniform_measure
from she_lab.mild_solver import (BumpInitial, ConstantInitial, GridConfig, LinearSigma, NoiseConfig,
                                 PowerLawSigma, SimConfig, TimeConfig, ZeroInitial,
                                 local_existence_probe, simulate, simulate_replica, truncate_sigma)
from she_lab.stable_kernel import GridFunction, KernelSpec, semigroup_apply

ONE = Weight.parse("one")


def make(kind="noncompensated", lam=0.5, sigma=None, u0=None, alpha=2.0, mass=1.0, L=6.0, n_x=64,
         dt=5e-3, T=0.5, snapshots=(0.0, 0.25, 0.5), replicas=50, seed=3):
    nu = uniform_measure(1.0, 2.0, mass=mass)
    noise = NoiseConfig(kind, nu, WeightSpec(ONE, ONE, mass, mass), lam)
    return SimConfig(KernelSpec(alpha), noise, sigma or LinearSigma(ONE), u0 or ConstantInitial(1.0),
                     GridConfig(L, n_x), TimeConfig(dt, T, snapshots), seed=seed, replicas=replicas)


def interior(cfg, frac=0.5):
    return np.abs(cfg.grid.nodes) <= frac * cfg.grid.L


@pytest.mark.parametrize("alpha", [2.0, 1.5])
def test_noiseless_constant(alpha):
    cfg = make(lam=0.0, alpha=alpha, replicas=2)
    ens = simulate(cfg)
    # far from the box edges the constant solution is preserved
    np.testing.assert_allclose(ens.values[:, :, interior(cfg, 0.3 if alpha < 2 else 0.5)], 1.0, atol=2e-2)
    if alpha == 2.0:
        np.testing.assert_allclose(ens.values[:, :, interior(cfg, 0.25)], 1.0, atol=1e-4)


def test_noiseless_bump_follows_semigroup():
    cfg = make(lam=0.0, u0=BumpInitial(0.0, 1.0, 1.0), replicas=1, n_x=192, dt=1e-3)
    ens = simulate(cfg)
    ref = semigroup_apply(KernelSpec(2.0), 0.5, GridFunction.indicator(-1.0, 1.0, n=2000), ens.x)
    err = np.max(np.abs(ens.values[0, -1] - ref))
    assert err < 2e-2


def test_zero_initial_stays_zero():
    cfg = make(sigma=PowerLawSigma(ONE, 2.0), u0=ZeroInitial(), lam=5.0, replicas=5)
    ens = simulate(cfg)
    assert np.all(ens.values == 0.0)
    assert not ens.diverged.any()


def test_reproducible_and_replica_addressable():
    cfg = make(replicas=6)
    a, b = simulate(cfg), simulate(cfg)
    np.testing.assert_array_equal(a.values, b.values)
    traj = simulate_replica(cfg, 4)
    np.testing.assert_array_equal(traj.states[-1].values, a.values[4, -1])
    other = simulate(cfg.replace(seed=4))
    assert not np.array_equal(other.values, a.values)


def test_monotone_in_noise_level():
    base = make(sigma=PowerLawSigma(ONE, 1.5), replicas=20, lam=0.2)
    lo, hi = simulate(base), simulate(base.replace(noise=dataclasses.replace(base.noise, lam=0.4)))
    assert np.all(hi.values >= lo.values - 1e-12)


def test_divergence_is_recorded():
    cfg = make(sigma=PowerLawSigma(ONE, 2.0), lam=20.0, mass=10.0, T=1.0, snapshots=(0.0, 0.5, 1.0),
               replicas=10)
    ens = simulate(cfg)
    assert ens.diverged.all()
    assert np.all(np.isfinite(ens.divergence_time))
    late = ens.diverged_at()
    assert np.all(np.isnan(ens.values[late]))
    assert ens.diverged_fraction()[-1] == 1.0
    traj = ens.trajectory(0)
    assert traj.diverged and traj.divergence_time is not None


def test_compensated_mean_is_preserved():
    cfg = make("compensated", lam=0.3, replicas=2000, T=0.2, snapshots=(0.1, 0.2), dt=1e-2, n_x=32, L=4.0)
    ens = simulate(cfg)
    v = ens.values[:, :, interior(cfg)].mean(axis=2)
    m = v.mean(axis=0)
    se = v.std(axis=0, ddof=1) / math.sqrt(v.shape[0])
    assert np.all(np.abs(m - 1.0) < 3 * se)


def test_validation():
    cfg = make()
    with pytest.raises(ConfigurationError):
        cfg.replace(time=TimeConfig(0.0, 1.0)).validate()
    with pytest.raises(ConfigurationError):
        cfg.replace(kernel=KernelSpec(2.0, 2)).validate()
    with pytest.raises(ConfigurationError):
        cfg.replace(time=TimeConfig(1e-2, 1.0, (0.0, 2.0))).validate()
    with pytest.raises(ConfigurationError):
        simulate(cfg.replace(noise=dataclasses.replace(cfg.noise, kind="gaussian")))


def test_truncation_examples():
    pl = PowerLawSigma(ONE, 2.0)
    tr = truncate_sigma(pl, 3.0)
    assert tr(5.0, 1.7) == tr(3.0, 1.7) == 9.0
    x = np.linspace(-3, 3, 2001)
    q = np.abs(np.diff(tr(x, 1.0))) / np.diff(x)
    assert q.max() <= 6.0 + 1e-9
    assert tr.lipschitz(1.0) == 6.0
    lin = LinearSigma(Weight.parse("abs"))
    x = np.linspace(-4, 4, 17)
    np.testing.assert_array_equal(truncate_sigma(lin, 4.0)(x, 1.5), lin(x, 1.5))
    with pytest.raises(DomainError):
        truncate_sigma(pl, 0.0)
    with pytest.raises(DomainError):
        PowerLawSigma(ONE, 1.0)


def test_existence_probe_linear_certifies_full_horizon():
    cfg = make(replicas=40)
    rep = local_existence_probe(cfg, [10.0, 100.0])
    assert rep.certified and rep.certified_horizon == pytest.approx(0.5)
    assert rep.sup_moments[0] == rep.sup_moments[1]


def test_existence_probe_small_noise():
    cfg = make("compensated", sigma=PowerLawSigma(ONE, 1.2), lam=0.1, replicas=100, T=0.2,
               snapshots=(0.0, 0.1, 0.2))
    rep = local_existence_probe(cfg, [1e3, 1e6])
    assert rep.certified_horizon == pytest.approx(0.2)


def test_existence_probe_strong_noise_cuts_horizon():
    cfg = make(sigma=PowerLawSigma(ONE, 2.0), lam=0.1, mass=10.0, replicas=100, T=2.0,
               snapshots=tuple(np.linspace(0, 2, 11)))
    rep = local_existence_probe(cfg, [10.0, 1e3])
    assert rep.certified_horizon is None or rep.certified_horizon < 2.0
    assert "horizon" in rep.message
