"""Command-line entry point: ``she-lab <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import comparison_odes as co
from .config import ExperimentConfig, list_presets, load_config, load_preset
from .errors import ConfigurationError, SheLabError
from .experiment import (EXIT_CONFIG, EXIT_OK, load_runs, override_config,
                         run_experiment, sweep, write_moment_csv, write_sweep_csv)
from .levy_noise import nu_preset, sample_points, weight_integrals
from .mild_solver import simulate
from .moment_analysis import averaged_moment, detect_blowup, lyapunov_estimate
from .rng import StreamFactory
from .stable_kernel import (KernelSpec, calibrate_bounds, dalang_upsilon, default_bound_grid, density,
                            estimate_bounds)

log = logging.getLogger("she_lab")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _experiment(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = load_preset(args.preset).config
    else:
        raise ConfigurationError("give --config or --preset")
    if getattr(args, "replicas", None):
        cfg = override_config(cfg, {"run.replicas": args.replicas})
    return cfg


def _out_dir(args) -> Path:
    p = Path(args.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_kernel(args) -> int:
    spec = KernelSpec(args.alpha, args.dim)
    if args.upsilon is not None:
        print(f"# upsilon({args.upsilon:g}) = {dalang_upsilon(spec, args.upsilon):.12g}")
    consts = None
    if args.calibrate_bounds:
        consts = calibrate_bounds(spec, *default_bound_grid())
        print(f"# c_lower = {consts.c_lower:.6g}, c_upper = {consts.c_upper:.6g}")
    if args.check_scaling:
        worst = 0.0
        for x in _floats(args.x):
            for s_ in (0.5, 2.0, 10.0):
                a = density(spec, s_ * args.t, abs(x))
                b = s_ ** (-spec.d / spec.alpha) * density(spec, args.t, s_ ** (-1.0 / spec.alpha) * abs(x))
                worst = max(worst, abs(a - b))
        print(f"# scaling defect = {worst:.3e}")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["t", "x", "p", "lower", "upper"])
    for x in _floats(args.x):
        p = density(spec, args.t, abs(x) if spec.d > 1 else x)
        lo = up = ""
        if consts is not None:
            lo, up = ("%.17g" % v for v in estimate_bounds(spec, consts, args.t, abs(x)))
        w.writerow([args.t, x, "%.17g" % p, lo, up])
    return EXIT_OK


def cmd_noise(args) -> int:
    if args.config or args.preset:
        cfg = _experiment(args)
        levy, weights = cfg.sim.noise.levy, cfg.sim.noise.weights
    else:
        levy = nu_preset(args.nu_preset, eps_min=args.eps_min)
        weights = None
    streams = StreamFactory(args.seed if args.seed is not None else 0)
    counts = np.zeros((args.replicas, levy.n_shells))
    total = np.zeros(args.replicas)
    for r in range(args.replicas):
        pts = sample_points(levy, tuple(args.window), tuple(args.box), rng_stream=streams, key=(r,))
        counts[r] = np.bincount(pts.shells, minlength=levy.n_shells)
        total[r] = float(np.sum(np.abs(pts.marks)))
    vol = (args.window[1] - args.window[0]) * (args.box[1] - args.box[0])
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["shell", "mass", "expected_count", "mean_count", "var_count"])
    for j in range(levy.n_shells):
        w.writerow([j, "%.10g" % levy.shell_mass(j), "%.10g" % (vol * levy.shell_mass(j)),
                    "%.10g" % counts[:, j].mean(), "%.10g" % counts[:, j].var()])
    w.writerow(["sum|h|", "", "%.10g" % (vol * levy.integral(lambda h: abs(h))),
                "%.10g" % total.mean(), "%.10g" % total.var()])
    if weights is not None:
        rep = weight_integrals(levy, weights)
        for key in ("int_J", "int_J2", "int_Jbar", "int_Jbar2"):
            w.writerow([key, "", "%.10g" % getattr(rep, key), "", ""])
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _experiment(args)
    sim = cfg.sim if args.seed is None else cfg.sim.replace(seed=args.seed)
    ens = simulate(sim)
    out = Path(args.out) if args.out else _out_dir(args) / f"{cfg.name}_moments.csv"
    write_moment_csv(ens, out)
    print(f"wrote {out} ({ens.n_replicas} replicas, diverged {int(ens.diverged.sum())})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg, runs = load_runs(args.runs)
    p = args.p if args.p is not None else cfg.sim.p
    finest = runs[-1]
    out = _out_dir(args)
    result = {"schema_version": 1, "runs": str(args.runs), "p": p}
    if args.ladder:
        result["blowup"] = detect_blowup(runs, p).as_dict()
    try:
        fit = lyapunov_estimate(averaged_moment(finest, p), tuple(args.fit_window) if args.fit_window else None)
        result["lyapunov"] = {"slope": fit.slope, "ci": list(fit.ci), "residual": fit.residual,
                              "window": list(fit.window)}
    except SheLabError as exc:
        result["lyapunov"] = {"error": str(exc)}
    (out / "analysis.json").write_text(json.dumps(result, indent=2) + "\n")
    write_moment_csv(finest, out / "analysis_moments.csv")
    print(json.dumps(result.get("blowup", {}).get("classification", result["lyapunov"])))
    return EXIT_OK


def cmd_classify(args) -> int:
    r = co.regime_classify(args.alpha, args.d, args.exponent, args.noise, args.u0, args.sigma)
    print(f"{r.regime}\t{r.citation}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    params = co.ComparisonParams(kappa=args.kappa, lam=args.lam, L_sigma=args.L_sigma, c1=args.c1,
                                 c2=args.c2, c0=args.c0, alpha=args.alpha, d=args.d,
                                 exponent=args.exponent, delta=args.delta, eta=args.eta)
    if args.kind == "noncompensated":
        t = np.linspace(0.0, args.t_max, args.n)
        vals = co.noncompensated_closed_form(params, t)
        tb = co.blowup_time(params)
    else:
        t = np.linspace(params.delta, args.t_max, args.n)
        solver = co.compensated_bound_ode if args.kind == "compensated" else co.weighted_bound_ode
        sol = solver(params, t, args.y0)
        vals, tb = sol.values, sol.blowup_time
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["t", "value", "blowup_time"])
    for ti, v in zip(t, vals):
        w.writerow(["%.17g" % ti, "%.17g" % v if math.isfinite(v) else "inf",
                    "" if tb is None else "%.17g" % tb])
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _experiment(args)
    rows = sweep(base, _floats(args.alphas), _floats(args.exponents), _floats(args.lambdas),
                 seed=args.seed, run=not args.no_simulate, threads=args.threads_hint)
    out = Path(args.out) if args.out else _out_dir(args) / "regime_map.csv"
    write_sweep_csv(rows, out)
    print(f"wrote {out} ({len(rows)} cells)")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _experiment(args)
    report = run_experiment(cfg, seed=args.seed, out_dir=args.out_dir, threads=args.threads_hint,
                            save_runs=not args.no_save_runs)
    print(f"{cfg.name}: regime {report.regime['regime']}, classification {report.classification}")
    if report.existence:
        print(report.existence["message"])
    return report.exit_code


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_source(p: argparse.ArgumentParser) -> None:
    # also accepted after the subcommand; SUPPRESS keeps the global value otherwise
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--config", help="INI configuration file")
    g.add_argument("--preset", help=f"shipped preset ({', '.join(list_presets())})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="she-lab", description=__doc__)
    ap.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    ap.add_argument("--out-dir", default=".", help="directory for reports")
    ap.add_argument("--threads-hint", type=int, default=1, help="worker threads for rungs and sweep cells")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kernel", help="evaluate the stable heat kernel")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--x", default="0", help="comma separated positions (radii for d > 1)")
    p.add_argument("--check-scaling", action="store_true")
    p.add_argument("--calibrate-bounds", action="store_true", help="fill the lower/upper columns")
    p.add_argument("--upsilon", type=float, default=None, metavar="BETA")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("noise", help="sample Poisson noise on a window and box")
    _add_source(p)
    p.add_argument("--nu-preset", default="uniform", help="measure preset when no config is given")
    p.add_argument("--eps-min", type=float, default=1e-3)
    p.add_argument("--window", type=float, nargs=2, default=[0.0, 1.0])
    p.add_argument("--box", type=float, nargs=2, default=[-1.0, 1.0])
    p.add_argument("--replicas", type=int, default=100)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("simulate", help="run one ensemble and write the moment CSV")
    _add_source(p)
    p.add_argument("--replicas", type=int)
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="analyse saved ladder runs")
    p.add_argument("--runs", required=True, help="directory written by `run`")
    p.add_argument("--p", type=float)
    p.add_argument("--fit-window", type=float, nargs=2)
    p.add_argument("--ladder", action="store_true", help="classify growth across the rungs")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("classify", help="regime of a parameter corner")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--exponent", type=float, required=True)
    p.add_argument("--noise", choices=("compensated", "noncompensated"), required=True)
    p.add_argument("--u0", choices=co.U0_TYPES, default="constant")
    p.add_argument("--sigma", choices=co.SIGMA_CLASSES, default="superlinear")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("bounds", help="tabulate a comparison ODE")
    p.add_argument("--kind", choices=("compensated", "noncompensated", "weighted"), required=True)
    for name, default in (("kappa", 1.0), ("lam", 1.0), ("L-sigma", 1.0), ("c1", 1.0), ("c2", 1.0),
                          ("c0", 1.0), ("alpha", 2.0), ("exponent", 2.0), ("delta", 1.0), ("eta", 1.0)):
        p.add_argument(f"--{name}", type=float, default=default)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--y0", type=float, default=None, help="start value (default: seeded from the constants)")
    p.add_argument("--t-max", type=float, default=2.0)
    p.add_argument("--n", type=int, default=41)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sweep", help="regime map over (alpha, exponent, lambda)")
    _add_source(p)
    p.add_argument("--alphas", required=True)
    p.add_argument("--exponents", required=True)
    p.add_argument("--lambdas", required=True)
    p.add_argument("--no-simulate", action="store_true", help="classifier only")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("run", help="full experiment: ladder, analysis, bounds, reports")
    _add_source(p)
    p.add_argument("--no-save-runs", action="store_true")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SheLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
