"""Sectioned ``key = value`` experiment configuration and the preset catalog."""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .comparison_odes import RegimeResult, regime_classify
from .errors import ConfigurationError, SheLabError
from .levy_noise import Weight, WeightSpec, nu_preset
from .mild_solver import (BumpInitial, ConstantInitial, GridConfig, LinearSigma, NoiseConfig,
                          PowerLawSigma, SimConfig, TimeConfig, ZeroInitial, truncate_sigma)
from .stable_kernel import KernelSpec

PRESET_ENV = "SHE_LAB_PRESET_DIR"
PRESET_NAMES = ("lipschitz-baseline", "compensated-superlinear", "noncompensated-superlinear", "bump-initial")


@dataclass(frozen=True)
class RungSpec:
    dt: float
    n_x: int
    replicas: int
    eps_min: float | None = None


@dataclass(frozen=True)
class ComparisonSetup:
    """Start time and shifts for the comparison ODEs."""

    delta: float = 0.1
    t0: float = 1.0
    eta: float = 1.0


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    sim: SimConfig
    ladder: tuple[RungSpec, ...]
    comparison: ComparisonSetup
    expected_regime: str | None
    expected_classification: tuple[str, ...]
    truncation_levels: tuple[float, ...]
    resolved: dict = field(repr=False)
    source: str = field(default="", repr=False)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def rung_config(self, rung: RungSpec, seed: int | None = None) -> SimConfig:
        sim = self.sim
        levy = sim.noise.levy
        noise = sim.noise
        if rung.eps_min is not None and rung.eps_min != levy.eps_min:
            noise = NoiseConfig(noise.kind, _build_nu(self.resolved["noise"], eps_min=rung.eps_min),
                                noise.weights, noise.lam)
        return sim.replace(grid=GridConfig(sim.grid.L, rung.n_x),
                           time=TimeConfig(rung.dt, sim.time.T, sim.time.snapshots),
                           replicas=rung.replicas, noise=noise,
                           seed=sim.seed if seed is None else int(seed))

    def classify(self) -> RegimeResult:
        return regime_classify(self.sim.kernel.alpha, self.sim.kernel.d, self.sim.sigma.exponent,
                               self.sim.noise.kind, self.sim.u0.kind,
                               "superlinear" if self.sim.sigma.superlinear else "lipschitz")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _get(sec, key, conv, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigurationError(f"missing key {key!r} in [{sec.name}]")
        return default
    raw = sec[key]
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value for {sec.name}.{key}: {raw!r}") from exc


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _build_nu(nu: dict, eps_min: float | None = None):
    kw = dict(nu["nu_params"])
    if eps_min is not None:
        kw["eps_min"] = eps_min
    return nu_preset(nu["nu"], **kw)


def _section(cp: configparser.ConfigParser, name: str, required: bool = True):
    if name not in cp:
        if required:
            raise ConfigurationError(f"missing section [{name}]")
        cp.add_section(name)
    return cp[name]


def parse_config(text: str, name: str = "custom") -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI text.

    Raises
    ------
    ConfigurationError
        On missing or malformed keys or violated invariants.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable config: {exc}") from exc
    try:
        return _parse(cp, name, text)
    except ConfigurationError:
        raise
    except SheLabError as exc:
        raise ConfigurationError(str(exc)) from exc
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(str(exc)) from exc


def _parse(cp, name: str, text: str) -> ExperimentConfig:
    k = _section(cp, "kernel")
    kernel = KernelSpec(_get(k, "alpha", float, required=True), _get(k, "d", int, 1))

    n = _section(cp, "noise")
    kind = _get(n, "type", str, required=True).strip()
    lam = _get(n, "lambda", float, required=True)
    nu_name = _get(n, "nu", str, "uniform").strip()
    if nu_name == "uniform":
        nu_params = {"lo": _get(n, "nu_lo", float, 1.0), "hi": _get(n, "nu_hi", float, 2.0),
                     "mass": _get(n, "nu_mass", float, 1.0)}
    elif nu_name == "powerlaw":
        nu_params = {"exponent": _get(n, "nu_exponent", float, 1.5),
                     "h_max": _get(n, "nu_hi", float, 1.0), "scale": _get(n, "nu_scale", float, 1.0)}
    else:
        raise ConfigurationError(f"unknown nu {nu_name!r}")
    nu_params["eps_min"] = _get(n, "eps_min", float, 1e-3)
    nu_params["symmetric"] = _get(n, "symmetric", _bool, False)
    J = Weight.parse(_get(n, "J", str, "one"))
    J_bar = Weight.parse(_get(n, "J_bar", str, J.describe()))
    weights = WeightSpec(J, J_bar, _get(n, "K", float, required=True), _get(n, "kappa", float, required=True))
    nu_res = {"nu": nu_name, "nu_params": nu_params}
    noise = NoiseConfig(kind, _build_nu(nu_res), weights, lam)

    s = _section(cp, "sigma")
    skind = _get(s, "kind", str, required=True).strip()
    scale = _get(s, "scale", float, 1.0)
    if skind == "linear":
        sigma = LinearSigma(Weight.parse(_get(s, "weight", str, J.describe())), scale)
        exponent = 1.0
    elif skind == "powerlaw":
        exponent = _get(s, "exponent", float, required=True)
        sigma = PowerLawSigma(Weight.parse(_get(s, "weight", str, J_bar.describe())), exponent,
                              _get(s, "signed", _bool, False), scale)
    else:
        raise ConfigurationError(f"unknown sigma kind {skind!r}")
    trunc = _get(s, "truncation", float)
    if trunc is not None:
        sigma = truncate_sigma(sigma, trunc)

    i = _section(cp, "initial", required=False)
    ikind = _get(i, "kind", str, "constant").strip()
    if ikind == "constant":
        u0 = ConstantInitial(_get(i, "c1", float, 1.0))
        init_res = {"kind": "constant", "c1": u0.c1}
    elif ikind == "bump":
        u0 = BumpInitial(_get(i, "center", float, 0.0), _get(i, "radius", float, 1.0),
                         _get(i, "height", float, 1.0))
        init_res = {"kind": "bump", "center": u0.center, "radius": u0.radius, "height": u0.height}
    elif ikind == "zero":
        u0 = ZeroInitial()
        init_res = {"kind": "zero"}
    else:
        raise ConfigurationError(f"unknown initial kind {ikind!r}")

    g = _section(cp, "grid")
    grid = GridConfig(_get(g, "L", float, 10.0), _get(g, "n_x", int, 256))
    t = _section(cp, "time")
    T = _get(t, "T", float, required=True)
    dt = _get(t, "dt", float, required=True)
    snaps_raw = _get(t, "snapshots", str, "21").strip()
    if " " in snaps_raw or "," in snaps_raw:
        snapshots = _floats(snaps_raw)
    else:
        count = int(snaps_raw)
        if count < 2:
            raise ConfigurationError("need at least two snapshots")
        snapshots = tuple(T * j / (count - 1) for j in range(count))
    time = TimeConfig(dt, T, snapshots)

    r = _section(cp, "run", required=False)
    sim = SimConfig(kernel, noise, sigma, u0, grid, time,
                    overflow_cap=_get(r, "cap", float, 1e12), seed=_get(r, "seed", int, 0),
                    replicas=_get(r, "replicas", int, 100), moment_order=_get(r, "moment_order", int))
    sim.validate()

    lad = _section(cp, "ladder", required=False)
    rungs = []
    for item in _get(lad, "rungs", str, "").split(","):
        if not item.strip():
            continue
        parts = item.strip().split(":")
        try:
            rungs.append(RungSpec(float(parts[0]), int(parts[1]), int(parts[2]),
                                  float(parts[3]) if len(parts) > 3 else None))
        except (IndexError, ValueError) as exc:
            raise ConfigurationError(f"bad ladder rung {item!r} (want dt:n_x:replicas[:eps_min])") from exc
    if not rungs:
        rungs = [RungSpec(dt, grid.n_x, sim.replicas)]
    for rung in rungs:
        if not (rung.dt > 0 and rung.n_x >= 3 and rung.replicas >= 1):
            raise ConfigurationError(f"invalid ladder rung {rung}")
    levels = _floats(_get(lad, "truncation", str, ""))

    c = _section(cp, "comparison", required=False)
    comp = ComparisonSetup(_get(c, "delta", float, 0.1), _get(c, "t0", float, 1.0), _get(c, "eta", float, 1.0))

    e = _section(cp, "expect", required=False)
    expected_regime = _get(e, "regime", str)
    expected_classification = tuple(_get(e, "classification", str, "").split())

    resolved = {
        "kernel": {"alpha": kernel.alpha, "d": kernel.d},
        "noise": {"type": kind, "lambda": lam, **nu_res, "J": J.describe(), "J_bar": J_bar.describe(),
                  "K": weights.K, "kappa": weights.kappa},
        "sigma": {"kind": skind, "exponent": exponent, "scale": scale,
                  "weight": sigma.weight.describe(), "truncation": trunc,
                  "signed": bool(getattr(sigma, "signed", False))},
        "initial": init_res,
        "grid": {"L": grid.L, "n_x": grid.n_x},
        "time": {"dt": dt, "T": T, "snapshots": list(time.snapshot_times())},
        "run": {"replicas": sim.replicas, "seed": sim.seed, "cap": sim.overflow_cap,
                "moment_order": sim.p},
        "ladder": {"rungs": [vars(r_) for r_ in rungs], "truncation": list(levels)},
        "comparison": vars(comp),
    }
    return ExperimentConfig(name, sim, tuple(rungs), comp, expected_regime, expected_classification,
                            levels, resolved, text)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, name=p.stem)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentPreset:
    name: str
    config: ExperimentConfig
    ladder: tuple[RungSpec, ...]
    expected_regime: str
    citation: str


def _preset_text(name: str) -> str:
    env = os.environ.get(PRESET_ENV)
    if env:
        for d in env.split(os.pathsep):
            cand = Path(d) / f"{name}.ini"
            if cand.is_file():
                return cand.read_text()
    res = resources.files("she_lab").joinpath("presets").joinpath(f"{name}.ini")
    if res.is_file():
        return res.read_text()
    raise ConfigurationError(f"unknown preset {name!r}; shipped presets: {', '.join(PRESET_NAMES)}")


def list_presets() -> list[str]:
    names = set(PRESET_NAMES)
    env = os.environ.get(PRESET_ENV)
    if env:
        for d in env.split(os.pathsep):
            if Path(d).is_dir():
                names.update(p.stem for p in Path(d).glob("*.ini"))
    return sorted(names)


def load_preset(name: str) -> ExperimentPreset:
    """Load a preset and check its expected regime against the classifier.

    Raises
    ------
    ConfigurationError
        If the preset is unknown or its expected regime disagrees with
        :func:`regime_classify`.
    """
    cfg = parse_config(_preset_text(name), name=name)
    got = cfg.classify()
    if cfg.expected_regime is None:
        raise ConfigurationError(f"preset {name!r} declares no expected regime")
    if got.regime != cfg.expected_regime:
        raise ConfigurationError(f"preset {name!r} expects {cfg.expected_regime!r} "
                                 f"but the classifier gives {got.regime!r}")
    return ExperimentPreset(name, cfg, cfg.ladder, cfg.expected_regime, got.citation)
