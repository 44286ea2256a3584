import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from she_lab.errors import DomainError, InvalidArgumentError
from she_lab.levy_noise import (LevyMeasureSpec, PointSet, Weight, WeightSpec, compensator_quadrature,
                                integrate_compensated, integrate_noncompensated, nu_preset,
                                power_law_measure, sample_points, uniform_measure, weight_integrals)
from she_lab.rng import StreamFactory


def _counts(spec, n, window=(0.0, 1.0), box=(-1.0, 1.0), seed=1):
    streams = StreamFactory(seed)
    out = np.zeros((n, spec.n_shells))
    for r in range(n):
        pts = sample_points(spec, window, box, rng_stream=streams, key=(r,))
        out[r] = np.bincount(pts.shells, minlength=spec.n_shells)
    return out


def test_single_shell_count_mean():
    # all mass in [1, 2] sits in the outer shell
    spec = uniform_measure(1.0, 2.0, mass=3.0)
    c = _counts(spec, 3000)[:, 0]
    se = c.std(ddof=1) / math.sqrt(c.size)
    assert abs(c.mean() - 6.0) < 3 * se


def test_power_law_shell_mass():
    spec = power_law_measure(2.0, eps_min=0.1, shell_boundaries=(1.0, 0.5, 0.25, 0.1))
    assert spec.shell_mass(1) == pytest.approx(1.0, rel=1e-9)
    assert spec.total_mass == pytest.approx(9.0, rel=1e-9)
    assert spec.levy_integrability() == pytest.approx(0.9, rel=1e-9)


def test_empty_window_and_shells():
    spec = uniform_measure()
    assert len(sample_points(spec, (0.5, 0.5), (-1, 1))) == 0
    assert len(sample_points(spec, (0.0, 1.0), (-1, 1), shells=[])) == 0
    with pytest.raises(DomainError):
        sample_points(spec, (1.0, 0.5), (-1, 1))


def test_points_lie_in_cell():
    spec = power_law_measure(1.5, eps_min=0.01, symmetric=True)
    pts = sample_points(spec, (0.2, 0.7), (-3.0, 2.0), rng_stream=StreamFactory(5), key=(0,))
    assert len(pts) > 0
    assert np.all((pts.times > 0.2) & (pts.times <= 0.7))
    assert np.all((pts.positions >= -3.0) & (pts.positions <= 2.0))
    assert np.all(np.abs(pts.marks) >= 0.01 - 1e-12)
    assert np.any(pts.marks < 0) and np.any(pts.marks > 0)
    for j in range(spec.n_shells):
        lo, hi = spec.shell_range(j)
        m = np.abs(pts.marks[pts.shells == j])
        assert np.all((m >= lo - 1e-12) & (m <= hi + 1e-12))


def test_streams_are_order_independent():
    spec = power_law_measure(1.5, eps_min=0.05)
    s = StreamFactory(11)
    a = sample_points(spec, (0, 1), (-1, 1), rng_stream=s, key=(3,))
    sample_points(spec, (0, 1), (-1, 1), rng_stream=s, key=(4,))
    b = sample_points(spec, (0, 1), (-1, 1), rng_stream=s, key=(3,))
    np.testing.assert_array_equal(a.marks, b.marks)
    # dropping a shell leaves the others untouched
    c = sample_points(spec, (0, 1), (-1, 1), shells=[1, 2], rng_stream=s, key=(3,))
    np.testing.assert_array_equal(np.sort(c.marks), np.sort(a.marks[np.isin(a.shells, [1, 2])]))


def test_lower_truncation_adds_points():
    coarse = power_law_measure(1.5, eps_min=0.1)
    fine = power_law_measure(1.5, eps_min=0.01)
    assert fine.total_mass >= coarse.total_mass


def test_disjoint_cells_uncorrelated():
    spec = uniform_measure(1.0, 2.0, mass=2.0)
    s = StreamFactory(2)
    n = 2000
    a = np.array([len(sample_points(spec, (0, 1), (-1, 0), rng_stream=s, key=(r, 0))) for r in range(n)])
    b = np.array([len(sample_points(spec, (0, 1), (0, 1), rng_stream=s, key=(r, 1))) for r in range(n)])
    prod = (a - a.mean()) * (b - b.mean())
    assert abs(prod.mean()) < 3 * prod.std(ddof=1) / math.sqrt(n)


def test_noncompensated_examples():
    pts = PointSet(np.full(5, 0.5), np.zeros(5), np.ones(5), np.zeros(5, int))
    assert integrate_noncompensated(lambda t, x, h: 1.0, pts) == 5
    pts = PointSet(np.array([0.1, 0.2]), np.zeros(2), np.array([0.5, -0.5]), np.zeros(2, int))
    assert integrate_noncompensated(lambda t, x, h: h, pts) == 0.0
    assert integrate_noncompensated(lambda t, x, h: h, PointSet.empty()) == 0.0


def test_compensated_definition():
    assert integrate_compensated(lambda t, x, h: 1.0, PointSet.empty(), 2.5) == -2.5
    with pytest.raises(InvalidArgumentError):
        integrate_compensated(lambda t, x, h: 1.0, PointSet.empty(), None)


def test_compensator_quadrature_matches_product():
    spec = uniform_measure(1.0, 2.0, mass=3.0)
    q = compensator_quadrature(lambda t, x, h: np.ones_like(t), spec, (0, 1), (-1, 1))
    assert q == pytest.approx(6.0, rel=1e-10)
    q = compensator_quadrature(lambda t, x, h: t * x**2 * h, spec, (0, 2), (0, 1))
    assert q == pytest.approx(2.0 * (1 / 3) * 3.0 * 1.5, rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(1e-3, 0.5))
def test_noncompensated_additive(split, eps):
    spec = power_law_measure(1.5, eps_min=eps)
    s = StreamFactory(0)
    a = sample_points(spec, (0, split), (-1, 1), rng_stream=s, key=(0,))
    b = sample_points(spec, (split, split + 1), (-1, 1), rng_stream=s, key=(1,))
    f = lambda t, x, h: np.abs(h) * (1 + t)
    both = PointSet.concat([a, b])
    assert integrate_noncompensated(f, both) == pytest.approx(
        integrate_noncompensated(f, a) + integrate_noncompensated(f, b), rel=1e-12)


def test_weight_integrals_examples():
    one = Weight.parse("one")
    rep = weight_integrals(uniform_measure(1.0, 2.0, mass=1.0), WeightSpec(one, one, 1.0, 1.0))
    for v in (rep.int_J, rep.int_J2, rep.int_Jbar, rep.int_Jbar2):
        assert v == pytest.approx(1.0, rel=1e-10)
    assert rep.passes("compensated") and rep.passes("noncompensated")

    narrow = uniform_measure(2.0 - 1e-6, 2.0 + 1e-6, mass=1.0)
    rep = weight_integrals(narrow, WeightSpec(Weight.parse("abs"), one, 10.0, 0.5))
    assert rep.int_J == pytest.approx(2.0, rel=1e-6)
    assert rep.int_J2 == pytest.approx(4.0, rel=1e-6)

    pl = power_law_measure(2.0, eps_min=0.1)
    rep = weight_integrals(pl, WeightSpec(Weight.parse("abs"), Weight.parse("abs"), 3.0, 0.5))
    assert rep.int_J == pytest.approx(math.log(10), rel=1e-9)
    assert rep.int_J2 == pytest.approx(0.9, rel=1e-9)
    assert rep.passes("noncompensated")
    rep = weight_integrals(pl, WeightSpec(Weight.parse("abs"), Weight.parse("abs"), 2.0, 0.5))
    assert not rep.passes("noncompensated")


def test_weight_parse():
    assert Weight.parse("2.5*abs")(-2.0) == 5.0
    assert Weight.parse("pow:2")(3.0) == 9.0
    with pytest.raises(DomainError):
        Weight.parse("sqrt")


def test_presets_and_measure_errors():
    assert nu_preset("uniform").total_mass == pytest.approx(1.0)
    with pytest.raises(DomainError):
        nu_preset("gamma")
    with pytest.raises(DomainError):
        LevyMeasureSpec(lambda h: 1.0, 0.0, math.inf)
    with pytest.raises(DomainError):
        power_law_measure(1.5, eps_min=0.1, shell_boundaries=(1.0, 0.05))
