"""Experiment orchestration: refinement ladders, matched comparison bounds,
CSV/JSON reports and parameter sweeps."""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .comparison_odes import (ComparisonParams, blowup_time, compensated_bound_ode,
                              noncompensated_closed_form, weighted_bound_ode)
from .config import ExperimentConfig, RungSpec, parse_config
from .errors import ConfigurationError, SheLabError
from .mild_solver import Ensemble, local_existence_probe, simulate
from .moment_analysis import (averaged_moment, detect_blowup, estimate_moments, inf_over_grid,
                              jackknife_mean, lyapunov_estimate, weighted_functional)
from .stable_kernel import (GridFunction, density, origin_lower_constant, shifted_lower_constant)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = ("snapshot_t", "x", "replica_mean", "replica_moment2", "stderr", "diverged_fraction")
EXIT_OK, EXIT_CONFIG, EXIT_NO_HORIZON = 0, 2, 3


# ---------------------------------------------------------------------------
# Config overrides
# ---------------------------------------------------------------------------


def override_config(cfg: ExperimentConfig, changes: dict[str, object]) -> ExperimentConfig:
    """Re-parse ``cfg`` with ``{"section.key": value}`` replacements."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(cfg.source)
    for dotted, value in changes.items():
        sec, key = dotted.split(".", 1)
        if sec not in cp:
            cp.add_section(sec)
        cp[sec][key] = str(value)
    buf = io.StringIO()
    cp.write(buf)
    return parse_config(buf.getvalue(), name=cfg.name)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def moment_table(ens: Ensemble) -> np.ndarray:
    """Rows of :data:`CSV_COLUMNS` for every (snapshot, node)."""
    m1, se = jackknife_mean(ens.values, axis=0)
    m2, _ = jackknife_mean(ens.values**2, axis=0)
    frac = ens.diverged_fraction()
    S, n = m1.shape
    t = np.repeat(ens.times, n)
    x = np.tile(ens.x, S)
    return np.column_stack([t, x, m1.ravel(), m2.ravel(), se.ravel(), np.repeat(frac, n)])


def write_moment_csv(ens: Ensemble, path: str | Path) -> Path:
    path = Path(path)
    table = moment_table(ens)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in table:
            w.writerow(["%.17g" % v for v in row])
    return path


def save_ensemble(ens: Ensemble, path: str | Path) -> None:
    cfg = ens.config
    np.savez_compressed(path, x=ens.x, times=ens.times, values=ens.values,
                        divergence_time=ens.divergence_time, max_abs=ens.max_abs,
                        replica_ids=ens.replica_ids, dt=cfg.time.dt, n_x=cfg.grid.n_x,
                        eps_min=cfg.noise.levy.eps_min)


def load_runs(run_dir: str | Path) -> tuple[ExperimentConfig, list[Ensemble]]:
    """Reload the rung ensembles written by :func:`run_experiment`."""
    run_dir = Path(run_dir)
    src = run_dir / "config.ini"
    if not src.is_file():
        raise ConfigurationError(f"{run_dir} holds no config.ini")
    cfg = parse_config(src.read_text(), name=run_dir.name)
    out = []
    for f in sorted(run_dir.glob("rung*.npz")):
        z = np.load(f)
        rung = RungSpec(float(z["dt"]), int(z["n_x"]), int(z["values"].shape[0]), float(z["eps_min"]))
        sim = cfg.rung_config(rung)
        dtime = z["divergence_time"]
        out.append(Ensemble(sim, z["x"], z["times"], z["values"], np.isfinite(dtime), dtime,
                            z["max_abs"], z["replica_ids"]))
    if not out:
        raise ConfigurationError(f"{run_dir} holds no rung files")
    return cfg, out


# ---------------------------------------------------------------------------
# Comparison bounds with matched constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DominationCheck:
    kind: str
    times: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    blowup_time: float | None
    z: float = 3.0
    pointwise_min: np.ndarray | None = None

    @property
    def violations(self) -> np.ndarray:
        ok = np.isfinite(self.estimate) & np.isfinite(self.bound)
        return ok & (self.estimate < self.bound - self.z * np.nan_to_num(self.stderr))

    @property
    def holds(self) -> bool:
        return not bool(self.violations.any())

    def as_dict(self) -> dict:
        return {"kind": self.kind, "times": self.times.tolist(),
                "estimate": _json_list(self.estimate), "stderr": _json_list(self.stderr),
                "bound": _json_list(self.bound), "blowup_time": self.blowup_time,
                "holds": self.holds, "violations": int(self.violations.sum()),
                "pointwise_min": None if self.pointwise_min is None else _json_list(self.pointwise_min)}


def _json_list(a) -> list:
    return [float(v) if math.isfinite(v) else None for v in np.asarray(a, dtype=float)]


def comparison_params(cfg: ExperimentConfig, **extra) -> ComparisonParams:
    sim = cfg.sim
    c1 = getattr(sim.u0, "c1", 1.0)
    return ComparisonParams(kappa=sim.noise.weights.kappa, lam=sim.noise.lam, L_sigma=sim.sigma.L_sigma,
                            c1=c1, alpha=sim.kernel.alpha, d=sim.kernel.d, exponent=sim.sigma.exponent,
                            delta=cfg.comparison.delta, eta=cfg.comparison.eta, t0=cfg.comparison.t0,
                            **extra)


def _bump_function(u0, dx: float = 0.01) -> GridFunction:
    n = max(2, int(round(2 * u0.radius / dx)))
    return GridFunction.indicator(u0.center - u0.radius, u0.center + u0.radius, n, u0.height)


def _homogeneous_inf(ens: Ensemble, p: float, L: float):
    """Infimum over ``x`` of a moment that is exactly ``x``-independent: the
    spatial average estimates it; the pointwise minimum of probe means is
    kept alongside for reference (it is biased low by the minimum over
    noisy estimates)."""
    return averaged_moment(ens, p), inf_over_grid(estimate_moments(ens, p), L)


def domination_check(cfg: ExperimentConfig, ens: Ensemble) -> tuple[DominationCheck | None, dict]:
    """Compare the Monte Carlo functional with the matched comparison bound on
    pre-divergence snapshots.  Returns the check and the constants used."""
    sim = cfg.sim
    if not sim.sigma.superlinear:
        return None, {}
    pre = ens.diverged_fraction() == 0
    kernel = sim.kernel
    if sim.u0.kind == "constant" and sim.noise.kind == "noncompensated":
        params = comparison_params(cfg)
        F, raw = _homogeneous_inf(ens, 1, sim.grid.L)
        bound = np.where(pre, noncompensated_closed_form(params, ens.times), np.nan)
        return (DominationCheck("noncompensated", ens.times, F.estimates[:, 0], F.stderr[:, 0], bound,
                                blowup_time(params), pointwise_min=raw.values),
                {"t_star": blowup_time(params)})
    if sim.u0.kind == "constant" and sim.noise.kind == "compensated":
        c2 = origin_lower_constant(kernel)
        params = comparison_params(cfg, c2=c2)
        F, raw = _homogeneous_inf(ens, 2, sim.grid.L)
        t = ens.times
        use = pre & (t >= params.delta)
        bound = np.full(t.size, np.nan)
        tb = None
        if use.any():
            sol = compensated_bound_ode(params, t[use])
            bound[use] = sol.values * t[use] ** (-1.0 / kernel.alpha)
            tb = sol.blowup_time
        return (DominationCheck("compensated", t, F.estimates[:, 0], F.stderr[:, 0], bound, tb,
                                pointwise_min=raw.values), {"c2": c2})
    if sim.u0.kind == "bump" and sim.noise.kind == "noncompensated":
        t0, eta = cfg.comparison.t0, cfg.comparison.eta
        c_t0 = shifted_lower_constant(kernel, _bump_function(sim.u0), t0=t0, eta=eta)
        c0 = c_t0 * float(density(kernel, 1.0, 0.0))
        params = comparison_params(cfg, c0=c0)
        W = weighted_functional(ens, kernel, t0=t0)
        shift = np.searchsorted(ens.times, t0 + 1e-12)
        pre_w = pre[shift:][: W.times.size]
        use = pre_w & (W.times >= params.delta)
        bound = np.full(W.times.size, np.nan)
        tb = None
        if use.any() and params.exponent > 1:
            sol = weighted_bound_ode(params, W.times[use])
            bound[use] = sol.values * W.times[use] ** (-kernel.d / kernel.alpha)
            tb = sol.blowup_time
        return DominationCheck("weighted", W.times, W.values, W.stderr, bound, tb), {"c_t0": c_t0, "c0": c0}
    return None, {}


# ---------------------------------------------------------------------------
# Run report
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RunReport:
    name: str
    config_hash: str
    seed: int
    status: str
    exit_code: int
    regime: dict
    classification: str | None
    calibration: dict = field(default_factory=dict)
    blowup: dict | None = None
    existence: dict | None = None
    domination: dict | None = None
    lyapunov: dict | None = None
    reference: dict | None = None
    files: dict = field(default_factory=dict)
    resolved: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)
    error: str | None = None

    def as_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION}
        d.update({k: v for k, v in vars(self).items()})
        return d

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.as_dict(), indent=2, default=_json_default) + "\n")
        return path

    def summary_row(self) -> dict:
        return {"name": self.name, "regime": self.regime.get("regime"),
                "classification": self.classification, "status": self.status}


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    raise TypeError(f"not serialisable: {type(obj)}")


def _validate(cfg: ExperimentConfig) -> None:
    for rung in cfg.ladder:
        cfg.rung_config(rung).validate()
    report = cfg.sim.weight_report()
    if not report.passes(cfg.sim.noise.kind):
        raise ConfigurationError(f"weight integrals fail the {cfg.sim.noise.kind} checks: {report.checks}")


def run_ladder(cfg: ExperimentConfig, seed: int | None = None, threads: int = 1) -> list[Ensemble]:
    configs = [cfg.rung_config(r, seed) for r in cfg.ladder]
    if threads > 1 and len(configs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(simulate, configs))
    return [simulate(c) for c in configs]


def _reference_curve(cfg: ExperimentConfig, ens: Ensemble) -> dict | None:
    """Renewal reference for linear sigma with constant data."""
    sim = cfg.sim
    if sim.sigma.superlinear or sim.u0.kind != "constant":
        return None
    c = sim.u0.c1
    w = sim.sigma.weight
    s = averaged_moment(ens, 1)
    if sim.noise.kind == "noncompensated":
        K1 = sim.noise.levy.integral(lambda h: float(w(h))) * sim.sigma.L_sigma
        ref = c * np.exp(sim.noise.lam * K1 * ens.times)
        label = "c exp(lambda K1 t)"
    else:
        ref = np.full(ens.times.size, c)
        label = "c (compensated mean)"
    return {"label": label, "times": ens.times.tolist(), "reference": ref.tolist(),
            "estimate": _json_list(s.estimates[:, 0]), "stderr": _json_list(s.stderr[:, 0])}


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, out_dir: str | Path | None = None,
                   threads: int = 1, save_runs: bool = True) -> RunReport:
    """Simulate the ladder, analyse it and attach matched comparison bounds.

    Raises :class:`ConfigurationError` before writing anything if the
    configuration is invalid.  If a later stage fails, the JSON report is
    written with ``status = "incomplete"`` and the error is re-raised.
    """
    _validate(cfg)
    seed = cfg.sim.seed if seed is None else int(seed)
    out = Path(out_dir) if out_dir is not None else None
    regime = cfg.classify()
    started = time.time()
    report = RunReport(cfg.name, cfg.config_hash, seed, "incomplete", 1,
                       {"regime": regime.regime, "citation": regime.citation}, None,
                       resolved=cfg.resolved)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        runs = run_ladder(cfg, seed, threads)
        finest = runs[-1]
        if len(runs) >= 3:
            br = detect_blowup(runs)
            report.blowup = br.as_dict()
            report.classification = br.classification
        else:
            report.classification = "indeterminate"
        try:
            fit = lyapunov_estimate(averaged_moment(finest))
            report.lyapunov = {"slope": fit.slope, "ci": list(fit.ci), "residual": fit.residual,
                               "window": list(fit.window)}
        except SheLabError as exc:
            report.lyapunov = {"error": str(exc)}
        check, consts = domination_check(cfg, finest)
        report.calibration = consts
        report.domination = check.as_dict() if check is not None else None
        report.reference = _reference_curve(cfg, finest)
        exit_code = EXIT_OK
        if cfg.truncation_levels:
            coarse = cfg.rung_config(cfg.ladder[0], seed)
            ex = local_existence_probe(coarse, cfg.truncation_levels)
            report.existence = {"levels": list(ex.levels), "sup_moments": list(ex.sup_moments),
                                "certified_horizon": ex.certified_horizon, "message": ex.message}
            if not ex.certified:
                exit_code = EXIT_NO_HORIZON
        if out is not None:
            report.files["csv"] = write_moment_csv(finest, out / f"{cfg.name}_moments.csv").name
            if save_runs:
                rd = out / "runs"
                rd.mkdir(exist_ok=True)
                (rd / "config.ini").write_text(cfg.source)
                for k, ens in enumerate(runs):
                    save_ensemble(ens, rd / f"rung{k}.npz")
                report.files["runs"] = "runs"
        report.status = "complete"
        report.exit_code = exit_code
        return report
    except Exception as exc:
        report.error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        report.wall_clock = {"started": started, "elapsed_s": time.time() - started}
        if out is not None:
            report.files["json"] = f"{cfg.name}_report.json"
            report.write(out / report.files["json"])


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


SWEEP_COLUMNS = ("alpha", "exponent", "lambda", "regime", "citation", "observed", "agreement", "error")


def _agreement(regime: str, observed: str | None) -> str:
    if observed is None:
        return "n/a"
    if regime == "no-global-solution":
        return "yes" if observed == "finite-time-divergence" else "no"
    if regime == "lipschitz-existence":
        return "yes" if observed in ("bounded", "exponential-growth") else "no"
    return "n/a"


def sweep_cell(base: ExperimentConfig, alpha: float, exponent: float, lam: float,
               seed: int | None = None, run: bool = True) -> dict:
    row = {"alpha": alpha, "exponent": exponent, "lambda": lam, "regime": "", "citation": "",
           "observed": "", "agreement": "n/a", "error": ""}
    try:
        changes = {"kernel.alpha": alpha, "noise.lambda": lam}
        if exponent == 1.0:
            changes["sigma.kind"] = "linear"
        else:
            changes.update({"sigma.kind": "powerlaw", "sigma.exponent": exponent})
        cfg = override_config(base, changes)
        reg = cfg.classify()
        row["regime"], row["citation"] = reg.regime, reg.citation
        if run:
            _validate(cfg)
            runs = run_ladder(cfg, seed)
            observed = detect_blowup(runs).classification if len(runs) >= 3 else "indeterminate"
            row["observed"] = observed
            row["agreement"] = _agreement(reg.regime, observed)
    except Exception as exc:  # recorded in-row, the sweep continues
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(base: ExperimentConfig, alphas: Sequence[float], exponents: Sequence[float],
          lambdas: Sequence[float], seed: int | None = None, run: bool = True,
          threads: int = 1) -> list[dict]:
    cells = [(a, g, l) for a in alphas for g in exponents for l in lambdas]
    job = lambda c: sweep_cell(base, *c, seed=seed, run=run)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, cells))
    return [job(c) for c in cells]


def write_sweep_csv(rows: Iterable[dict], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path
