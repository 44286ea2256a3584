"""Acceptance criteria, one test per criterion.

Each test prints ``criterion N: PASS`` or ``criterion N: FAIL`` followed by
the individual checks, and the terminal summary repeats the verdicts.  Run
``python3 tests/test_acceptance.py`` to get the lines without pytest.
"""

from __future__ import annotations

import hashlib
import math
import sys
import tempfile
from pathlib import Path

import numpy as np
from scipy import integrate

sys.path.insert(0, str(Path(__file__).resolve().parent))

import oracles  # noqa: E402
from she_lab import comparison_odes as co  # noqa: E402
from she_lab.config import list_presets, load_preset  # noqa: E402
from she_lab.errors import SheLabError  # noqa: E402
from she_lab.experiment import run_experiment  # noqa: E402
from she_lab.levy_noise import (Weight, WeightSpec, compensator_quadrature, integrate_compensated,  # noqa: E402
                                power_law_measure, sample_points, uniform_measure)
from she_lab.mild_solver import (ConstantInitial, GridConfig, LinearSigma, NoiseConfig, SimConfig,  # noqa: E402
                                 TimeConfig, simulate)
from she_lab.moment_analysis import averaged_moment  # noqa: E402
from she_lab.rng import StreamFactory  # noqa: E402
from she_lab.stable_kernel import (KernelSpec, calibrate_bounds, count_bound_violations,  # noqa: E402
                                   dalang_upsilon, density)

ALPHAS = (1.0, 1.5, 2.0)


class Verdict:
    def __init__(self, n: int, title: str):
        self.n, self.title, self.checks = n, title, []

    def check(self, label: str, ok: bool, detail: str = "") -> bool:
        self.checks.append((label, bool(ok), detail))
        return bool(ok)

    @property
    def ok(self) -> bool:
        return all(c[1] for c in self.checks)

    def finish(self) -> None:
        print(f"criterion {self.n}: {'PASS' if self.ok else 'FAIL'} ({self.title})")
        for label, ok, detail in self.checks:
            print(f"    [{'ok' if ok else 'FAIL'}] {label}" + (f": {detail}" if detail else ""))
        failed = [c[0] for c in self.checks if not c[1]]
        assert not failed, f"criterion {self.n} failed checks: {failed}"


# ---------------------------------------------------------------------------


def test_criterion_1_kernel_identities():
    v = Verdict(1, "kernel identities")
    t_grid = np.logspace(-1, 1, 10)
    x_grid = np.linspace(-6, 6, 10)
    for a in ALPHAS:
        spec = KernelSpec(a)
        tol = 1e-8 if a in (1.0, 2.0) else 1e-5
        worst = 0.0
        for s in (0.5, 1.0, 3.0):
            for t in t_grid:
                lhs = density(spec, s * t, x_grid)
                rhs = t ** (-1 / a) * density(spec, s, t ** (-1 / a) * x_grid)
                worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        v.check(f"scaling alpha={a:g}", worst <= tol, f"max defect {worst:.2e} <= {tol:g}")

    for a in ALPHAS:
        spec = KernelSpec(a)
        worst = 0.0
        for s, t, x in ((1.0, 1.0, 0.0), (0.5, 1.5, 0.7), (2.0, 0.3, -2.0)):
            val, _ = integrate.quad(lambda y: density(spec, s, x - y) * density(spec, t, y), -np.inf, np.inf,
                                    epsabs=1e-12, epsrel=1e-10, limit=400)
            worst = max(worst, abs(val - density(spec, s + t, x)))
        v.check(f"Chapman-Kolmogorov alpha={a:g}", worst <= 1e-5, f"max defect {worst:.2e}")
    spot = density(KernelSpec(2.0), 2.0, 0.0)
    v.check("p(2,0) for alpha=2", abs(spot - (8 * math.pi) ** -0.5) <= 1e-5, f"{spot:.7f}")

    xs = np.linspace(-5, 5, 20)
    X, Y = np.meshgrid(xs, xs)
    for a in ALPHAS:
        spec = KernelSpec(a)
        bad = 0
        tested = 0
        for t in (0.5, 1.0, 4.0):
            if density(spec, t, 0.0) > 1:
                continue
            for k in (2.0, 3.0):
                lhs = density(spec, t, (X - Y) / k)
                rhs = density(spec, t, X) * density(spec, t, Y)
                bad += int(np.sum(lhs < rhs))
                tested += X.size
        v.check(f"product inequality alpha={a:g}", tested > 0 and bad == 0, f"{bad} of {tested} fail")
    v.finish()


def test_criterion_2_two_sided_estimate():
    v = Verdict(2, "two-sided heat kernel estimate")
    t_eval = np.logspace(-2, 2, 57)
    r_eval = np.concatenate(([0.0], np.logspace(-2, 2, 73)))
    for a in ALPHAS:
        spec = KernelSpec(a)
        try:
            consts = calibrate_bounds(spec)
        except SheLabError as exc:
            v.check(f"alpha={a:g}", False, f"calibration impossible: {exc}")
            continue
        n = count_bound_violations(spec, consts, t_eval, r_eval)
        v.check(f"alpha={a:g}", n == 0,
                f"c_lower={consts.c_lower:.4g}, c_upper={consts.c_upper:.4g}, {n} violations "
                f"on {t_eval.size}x{r_eval.size}")
    v.finish()


def test_criterion_3_dalang():
    v = Verdict(3, "Dalang integral")
    u2 = dalang_upsilon(KernelSpec(2.0), 1.0)
    v.check("alpha=2", abs(u2 - 1 / (2 * math.sqrt(2))) <= 1e-6, f"{u2:.9f}")
    v.check("alpha=1 diverges", math.isinf(dalang_upsilon(KernelSpec(1.0), 1.0)))
    u15 = dalang_upsilon(KernelSpec(1.5), 1.0)
    ref = oracles.upsilon_closed(1.5)
    v.check("alpha=1.5", math.isfinite(u15) and u15 > 0 and abs(u15 / ref - 1) <= 1e-4,
            f"{u15:.7f} vs {ref:.7f}")
    v.finish()


def test_criterion_4_noise_layer():
    v = Verdict(4, "Poisson noise layer")
    n = 10_000
    spec = power_law_measure(1.5, eps_min=0.01)
    window, box = (0.0, 1.0), (-1.0, 1.0)
    vol = 2.0
    streams = StreamFactory(2024)
    counts = np.zeros((n, spec.n_shells))
    comp = np.zeros(n)
    f = lambda t, x, h: np.abs(h)
    q = compensator_quadrature(f, spec, window, box)
    for r in range(n):
        pts = sample_points(spec, window, box, rng_stream=streams, key=(r,))
        counts[r] = np.bincount(pts.shells, minlength=spec.n_shells)
        comp[r] = integrate_compensated(f, pts, q)
    for j in range(spec.n_shells):
        mean = vol * spec.shell_mass(j)
        c = counts[:, j]
        if mean == 0:
            v.check(f"shell {j} empty", c.sum() == 0)
            continue
        z = abs(c.mean() - mean) / (c.std(ddof=1) / math.sqrt(n))
        v.check(f"shell {j} count", z < 3, f"mean {c.mean():.4f} vs {mean:.4f} (z={z:.2f})")
    z = abs(comp.mean()) / (comp.std(ddof=1) / math.sqrt(n))
    v.check("compensated mean", z < 3, f"{comp.mean():.4f} (z={z:.2f})")
    iso = vol * spec.integral(lambda h: h * h)
    rel = comp.var(ddof=1) / iso - 1
    v.check("compensated variance", abs(rel) < 0.05, f"{comp.var(ddof=1):.4f} vs {iso:.4f} ({rel:+.2%})")
    # integrand depending on time and position as well
    g = lambda t, x, h: np.abs(h) * (1 + t) * np.cos(x)
    qg = compensator_quadrature(g, spec, window, box)
    vals = np.array([integrate_compensated(g, sample_points(spec, window, box, rng_stream=streams,
                                                            key=(n + r,)), qg) for r in range(n)])
    iso_g = compensator_quadrature(lambda t, x, h: (np.abs(h) * (1 + t) * np.cos(x)) ** 2, spec, window, box)
    z = abs(vals.mean()) / (vals.std(ddof=1) / math.sqrt(n))
    rel = vals.var(ddof=1) / iso_g - 1
    v.check("second integrand mean", z < 3, f"z={z:.2f}")
    v.check("second integrand variance", abs(rel) < 0.05, f"{rel:+.2%}")
    v.finish()


def _linear_config(kind, lam, mass, J, replicas, dt, n_x, L=8.0, T=1.0, seed=11):
    w = Weight.parse(J)
    nu = uniform_measure(1.0, 2.0, mass=mass)
    K = nu.integral(lambda h: float(w(h)) ** (2 if kind == "compensated" else 1))
    noise = NoiseConfig(kind, nu, WeightSpec(w, w, K, K), lam)
    return SimConfig(KernelSpec(2.0), noise, LinearSigma(w), ConstantInitial(1.0), GridConfig(L, n_x),
                     TimeConfig(dt, T, tuple(np.linspace(0, T, 6))), seed=seed, replicas=replicas)


def test_criterion_5_linear_oracles():
    v = Verdict(5, "linear sigma solver oracles")
    cfg = _linear_config("noncompensated", 0.5, 1.0, "abs", 1000, 2e-3, 128)
    K1 = cfg.noise.levy.integral(lambda h: abs(h))
    s = averaged_moment(simulate(cfg), 1)
    ref = oracles.exponential_renewal(1.0, 0.5 * K1, s.times)
    for t, m, se, r in zip(s.times[1:], s.estimates[1:, 0], s.stderr[1:, 0], ref[1:]):
        rel = m / r - 1
        v.check(f"first moment t={t:.1f}", abs(rel) <= 0.05 and abs(m - r) <= 3 * se,
                f"{m:.4f} +/- {se:.4f} vs {r:.4f} ({rel:+.2%})")

    # lam^2 K2 = 7/3 with nu of mass 10 on [1, 2] and J(h) = |h|
    cfg = _linear_config("compensated", 10 ** -0.5, 10.0, "abs", 20_000, 2e-3, 128)
    K2 = cfg.noise.levy.integral(lambda h: h * h)
    a = cfg.noise.lam**2 * K2 / math.sqrt(8 * math.pi)
    tv, vv = oracles.volterra_sqrt(1.0, a, 1.0)
    s = averaged_moment(simulate(cfg), 2)
    ref = np.interp(s.times, tv, vv)
    for t, m, se, r in zip(s.times[1:], s.estimates[1:, 0], s.stderr[1:, 0], ref[1:]):
        rel = m / r - 1
        v.check(f"second moment t={t:.1f}", abs(rel) <= 0.10, f"{m:.3f} +/- {se:.3f} vs {r:.3f} ({rel:+.2%})")
    v.finish()


def test_criterion_6_comparison_odes():
    v = Verdict(6, "comparison ODEs")
    unit = co.ComparisonParams(kappa=1, lam=1, L_sigma=1, c1=1, c2=1, alpha=2.0, d=1, exponent=2.0,
                               delta=1.0, eta=1.0)
    t = np.linspace(0, 0.95, 20)
    F = co.noncompensated_closed_form(unit, t)
    v.check("F(t) = 1/(1-t)", np.max(np.abs(F - 1 / (1 - t))) <= 1e-12 * np.max(F))
    v.check("t* = 1", co.blowup_time(unit) == 1.0)
    sol = co.compensated_bound_ode(unit.replace(exponent=1.5), np.linspace(1, 6, 11), y0=1.0)
    ref = oracles.compensated_tb_example()
    rel = abs(sol.blowup_time / ref - 1) if sol.blowup_time else math.inf
    v.check("compensated t_b", rel <= 1e-3, f"{sol.blowup_time} vs {ref} (rel {rel:.1e})")
    sol = co.weighted_bound_ode(unit, np.linspace(1, 4, 7), seed=1.0)
    ref = oracles.weighted_tb_example()
    rel = abs(sol.blowup_time / ref - 1) if sol.blowup_time else math.inf
    v.check("weighted t_b", rel <= 1e-3, f"{sol.blowup_time} vs {ref} (rel {rel:.1e})")
    v.finish()


def test_criterion_7_classifier():
    v = Verdict(7, "regime classifier")
    corners = [
        ("compensated 1 < beta < alpha", (1.5, 1, 1.2, "compensated", "constant", "superlinear"),
         "no-global-solution"),
        ("non-compensated gamma > 1, bounded below", (2.0, 1, 4.0, "noncompensated", "constant", "superlinear"),
         "no-global-solution"),
        ("non-compensated 1 < gamma < 1 + alpha/d, bump", (2.0, 1, 2.0, "noncompensated", "bump", "superlinear"),
         "no-global-solution"),
        ("Lipschitz existence", (2.0, 1, 1.0, "compensated", "bump", "lipschitz"), "lipschitz-existence"),
        ("infinite Dalang integral", (1.0, 1, 1.2, "compensated", "constant", "superlinear"), "out-of-framework"),
        ("boundary beta = alpha", (1.5, 1, 1.5, "compensated", "constant", "superlinear"),
         "boundary/indeterminate"),
        ("boundary gamma = 1 + alpha/d", (2.0, 1, 3.0, "noncompensated", "bump", "superlinear"),
         "boundary/indeterminate"),
    ]
    for label, args, want in corners:
        got = co.regime_classify(*args).regime
        v.check(label, got == want, f"{got}")
    for name in list_presets():
        pre = load_preset(name)
        got = pre.config.classify().regime
        v.check(f"preset {name}", got == pre.config.expected_regime, got)
    v.finish()


def test_criterion_8_blowup_experiment():
    v = Verdict(8, "blow-up experiment")
    cfg = load_preset("noncompensated-superlinear").config
    rep = run_experiment(cfg)
    v.check("classification", rep.classification == "finite-time-divergence", str(rep.classification))
    dom = rep.domination
    compared = sum(b is not None and e is not None for b, e in zip(dom["bound"], dom["estimate"]))
    v.check("F >= F_closed - 3 SE on pre-divergence snapshots", dom["holds"] and compared > 0,
            f"{compared} snapshots compared, {dom['violations']} violations")
    tb = rep.blowup
    v.check("earliest divergence vs t*", tb["earliest_divergence"] is not None
            and tb["earliest_divergence"] <= rep.calibration["t_star"],
            f"5% quantile {tb['earliest_divergence']:.3f}, median {tb['divergence_time']:.3f}, "
            f"t* = {rep.calibration['t_star']:.3f}")
    base = run_experiment(load_preset("lipschitz-baseline").config)
    v.check("Lipschitz baseline", base.classification in ("bounded", "exponential-growth"),
            str(base.classification))
    v.finish()


def _csv_hash(name: str, seed: int) -> str:
    cfg = load_preset(name).config
    with tempfile.TemporaryDirectory() as d:
        rep = run_experiment(cfg, seed=seed, out_dir=d, save_runs=False)
        return hashlib.sha256((Path(d) / rep.files["csv"]).read_bytes()).hexdigest()


def test_criterion_9_reproducibility():
    v = Verdict(9, "reproducibility")
    for name in ("lipschitz-baseline", "noncompensated-superlinear"):
        a, b = _csv_hash(name, 5), _csv_hash(name, 5)
        v.check(f"{name} same seed", a == b, a[:16])
        c = _csv_hash(name, 6)
        v.check(f"{name} other seed differs", c != a, c[:16])
    v.finish()


if __name__ == "__main__":
    failures = 0
    for name, fn in sorted((k, f) for k, f in globals().items() if k.startswith("test_criterion_")):
        try:
            fn()
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
