"""Moment estimation, spatial functionals, growth fits and blow-up detection
for ensembles produced by :mod:`she_lab.mild_solver`."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigurationError, DomainError
from .stable_kernel import KernelSpec, density

EARLY_QUANTILE = 0.05  # quantile of replica divergence times reported as "earliest"

CLASSIFICATIONS = ("bounded", "exponential-growth", "finite-time-divergence", "indeterminate")


@dataclass(frozen=True, eq=False)
class MomentSeries:
    """``E|u(t, x)|^p`` per snapshot and probe with jackknife standard errors.

    Diverged replicas are censored: they are left out of the means and
    counted in ``diverged_fraction``.
    """

    p: float
    times: np.ndarray
    x: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    replicas: int
    n_used: np.ndarray
    diverged_fraction: np.ndarray

    @property
    def censored(self) -> bool:
        return bool(np.any(self.n_used < self.replicas))

    @property
    def fully_censored(self) -> bool:
        return bool(np.all(self.n_used == 0))

    @property
    def pre_divergence(self) -> np.ndarray:
        """Snapshots at which no replica has diverged yet."""
        return self.diverged_fraction == 0

    def column(self, i: int = 0) -> "MomentSeries":
        return MomentSeries(self.p, self.times, self.x[i:i + 1], self.estimates[:, i:i + 1],
                            self.stderr[:, i:i + 1], self.replicas, self.n_used, self.diverged_fraction)


def jackknife_mean(samples: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Mean and leave-one-out jackknife standard error along ``axis`` (NaNs ignored)."""
    a = np.moveaxis(np.asarray(samples, dtype=float), axis, 0)
    ok = np.isfinite(a)
    n = ok.sum(axis=0)
    total = np.where(ok, a, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = total / n
        loo = (total[None] - a) / (n - 1)[None]
        dev = np.where(ok, loo - mean[None], 0.0)
        se = np.sqrt((n - 1) / n * (dev**2).sum(axis=0))
    se = np.where(n > 1, se, np.nan)
    return mean, se


def interior_mask(x: np.ndarray, L: float, exclude: float = 0.1) -> np.ndarray:
    """Probes outside the outer ``exclude`` fraction of ``[-L, L]``."""
    return np.abs(np.asarray(x)) <= (1.0 - exclude) * L + 1e-12


def _probe_columns(ensemble, probes) -> np.ndarray:
    x = ensemble.x
    if probes is None:
        return np.arange(x.size)
    probes = np.atleast_1d(np.asarray(probes, dtype=float))
    L = ensemble.config.grid.L
    if np.any(np.abs(probes) > L):
        raise DomainError("probes must lie inside the grid")
    return np.clip(np.rint((probes + L) / ensemble.config.grid.dx - 0.5).astype(int), 0, x.size - 1)


def estimate_moments(ensemble, p: float | None = None, probes=None) -> MomentSeries:
    """Sample moments ``E|u(t, x)|^p`` at the probe nodes (default: all nodes).

    Returns an empty series (all NaN, fully censored) if every replica
    diverged before the first snapshot.
    """
    p = float(ensemble.config.p if p is None else p)
    if ensemble.n_replicas < 2:
        raise ConfigurationError("moment estimation needs at least two replicas")
    cols = _probe_columns(ensemble, probes)
    data = np.abs(ensemble.values[:, :, cols]) ** p
    mean, se = jackknife_mean(data, axis=0)
    n_used = np.isfinite(data[:, :, 0]).sum(axis=0)
    return MomentSeries(p, ensemble.times.copy(), ensemble.x[cols].copy(), mean, se,
                        ensemble.n_replicas, n_used, ensemble.diverged_fraction())


def averaged_moment(ensemble, p: float | None = None, probes=None, exclude: float = 0.5) -> MomentSeries:
    """Moment averaged over probes (default: the central half of the box).

    The standard error resamples per-replica spatial averages, so spatial
    correlation is accounted for.  For constant initial data the exact
    moment does not depend on ``x``, and this is the low-bias estimator of
    its infimum; the central window keeps the box-edge mass loss out.
    """
    p = float(ensemble.config.p if p is None else p)
    if ensemble.n_replicas < 2:
        raise ConfigurationError("moment estimation needs at least two replicas")
    cols = _probe_columns(ensemble, probes)
    if probes is None:
        cols = cols[interior_mask(ensemble.x[cols], ensemble.config.grid.L, exclude)]
    data = (np.abs(ensemble.values[:, :, cols]) ** p).mean(axis=2)
    mean, se = jackknife_mean(data, axis=0)
    n_used = np.isfinite(data).sum(axis=0)
    centre = np.array([float(ensemble.x[cols].mean())])
    return MomentSeries(p, ensemble.times.copy(), centre, mean[:, None], se[:, None],
                        ensemble.n_replicas, n_used, ensemble.diverged_fraction())


@dataclass(frozen=True, eq=False)
class InfSeries:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    argmin: np.ndarray


def inf_over_grid(series: MomentSeries, L: float | None = None, exclude: float = 0.1) -> InfSeries:
    """``F(t) = min_x E|u(t, x)|^p`` over probes away from the box boundary.

    ``L`` defaults to the largest probe distance from the origin.
    """
    x = series.x
    if L is None:
        L = float(np.max(np.abs(x))) if x.size else 0.0
    keep = interior_mask(x, L, exclude) if x.size > 1 else np.ones(x.size, bool)
    est = series.estimates[:, keep]
    se = series.stderr[:, keep]
    xs = x[keep]
    vals = np.full(series.times.size, np.nan)
    errs = np.full(series.times.size, np.nan)
    where = np.full(series.times.size, np.nan)
    for s in range(series.times.size):
        row = est[s]
        if np.all(np.isnan(row)):
            continue
        k = int(np.nanargmin(row))
        vals[s], errs[s], where[s] = row[k], se[s, k], xs[k]
    return InfSeries(series.times.copy(), vals, errs, where)


@dataclass(frozen=True)
class LyapunovFit:
    slope: float
    ci: tuple[float, float]
    stderr: float
    intercept: float
    residual: float
    window: tuple[float, float]


def _default_window(times: np.ndarray, usable: np.ndarray) -> tuple[float, float]:
    t = times[usable]
    if t.size < 2:
        raise DomainError("need at least two usable snapshots to fit a slope")
    half = t[0] + 0.5 * (t[-1] - t[0])
    return float(half), float(t[-1])


def lyapunov_estimate(series, window: tuple[float, float] | None = None, probe: int = 0,
                      level: float = 0.95) -> LyapunovFit:
    """Least-squares slope of ``ln E|u|^p`` against ``t``.

    ``series`` is a :class:`MomentSeries` (column ``probe``) or a
    ``(times, values)`` pair.  The default window is the last half of the
    pre-divergence record.

    Raises
    ------
    DomainError
        If an estimate in the window is not strictly positive.
    """
    if isinstance(series, MomentSeries):
        times, vals = series.times, series.estimates[:, probe]
        usable = series.pre_divergence & np.isfinite(vals)
    else:
        times, vals = (np.asarray(a, dtype=float) for a in series)
        usable = np.isfinite(vals)
    if window is None:
        window = _default_window(times, usable)
    sel = usable & (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
    t, v = times[sel], vals[sel]
    if t.size < 2:
        raise DomainError("fit window holds fewer than two snapshots")
    if np.any(v <= 0):
        raise DomainError("moment estimates must be positive on the fit window")
    y = np.log(v)
    fit = stats.linregress(t, y)
    resid = y - (fit.intercept + fit.slope * t)
    rms = float(np.sqrt(np.mean(resid**2)))
    se = float(fit.stderr) if t.size > 2 else 0.0
    q = stats.t.ppf(0.5 + level / 2.0, max(t.size - 2, 1)) if t.size > 2 else 0.0
    return LyapunovFit(float(fit.slope), (float(fit.slope - q * se), float(fit.slope + q * se)),
                       se, float(fit.intercept), rms, (float(window[0]), float(window[1])))


@dataclass(frozen=True, eq=False)
class WeightedSeries:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray


def _kernel_weights(kernel: KernelSpec, t: float, x: np.ndarray, dx: float) -> np.ndarray:
    return density(kernel, t, np.abs(x)) * dx


def weighted_functional(data, kernel: KernelSpec, t0: float = 0.0, dx: float | None = None) -> WeightedSeries:
    """``t -> int E|v(t, x)| p(t, x) dx`` with ``v(t, .) = u(t + t0, .)``.

    ``data`` is an ensemble (standard errors from per-replica quadrature) or
    a first-moment :class:`MomentSeries` (pass ``dx`` for non-ensemble data).
    Snapshots with ``t = 0`` are skipped.

    Raises
    ------
    ConfigurationError
        If the kernel has no density at ``(alpha, d)``.
    """
    if not kernel.supported:
        raise ConfigurationError(f"no density for alpha={kernel.alpha}, d={kernel.d}")
    if isinstance(data, MomentSeries):
        times, x = data.times, data.x
        if dx is None:
            dx = float(np.diff(x).mean()) if x.size > 1 else 0.0
        est = data.estimates
        per_replica = None
    else:
        times, x = data.times, data.x
        dx = data.config.grid.dx if dx is None else dx
        per_replica = np.abs(data.values)
    keep = times > t0 + 1e-12
    out_t = times[keep] - t0
    vals = np.zeros(out_t.size)
    errs = np.zeros(out_t.size)
    if x.size == 0:
        return WeightedSeries(out_t, vals, errs)
    for k, s in enumerate(np.nonzero(keep)[0]):
        w = _kernel_weights(kernel, out_t[k], x, dx)
        if per_replica is None:
            vals[k] = float(np.nansum(est[s] * w))
            errs[k] = float(np.sqrt(np.nansum((data.stderr[s] * w) ** 2)))
        else:
            m, se = jackknife_mean(per_replica[:, s, :] @ w)
            vals[k], errs[k] = float(m), float(se)
    return WeightedSeries(out_t, vals, errs)


def jensen_check(m: np.ndarray, q: np.ndarray, f: Callable[[np.ndarray], np.ndarray]) -> tuple[float, float]:
    """Return ``(sum f(m) q, f(sum m q))`` for a discrete probability weight ``q``.

    For convex ``f`` the first entry is never smaller than the second.
    """
    q = np.asarray(q, dtype=float)
    q = q / q.sum()
    m = np.asarray(m, dtype=float)
    return float(np.sum(f(m) * q)), float(f(np.sum(m * q)))


def kernel_probability_weights(kernel: KernelSpec, t: float, x: np.ndarray, dx: float) -> np.ndarray:
    w = _kernel_weights(kernel, t, x, dx)
    return w / w.sum()


# ---------------------------------------------------------------------------
# Blow-up detection over a refinement ladder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rung:
    dt: float
    dx: float
    eps_min: float
    replicas: int


@dataclass(frozen=True)
class BlowupThresholds:
    residual: float = 0.05        # RMS of the log-linear fit
    spread: float = 0.25          # relative disagreement of divergence times
    diverged: float = 0.95        # final diverged fraction
    bounded: float = 0.1          # allowed log growth for "bounded"


@dataclass(frozen=True, eq=False)
class RungEvidence:
    rung: Rung
    times: np.ndarray
    diverged_fraction: np.ndarray
    slope: float | None
    residual: float | None
    log_growth: float | None
    divergence_time: float | None
    divergence_iqr: tuple[float, float] | None
    earliest_divergence: float | None = None

    def as_dict(self) -> dict:
        return {
            "dt": self.rung.dt, "dx": self.rung.dx, "eps_min": self.rung.eps_min,
            "replicas": self.rung.replicas,
            "times": self.times.tolist(), "diverged_fraction": self.diverged_fraction.tolist(),
            "slope": self.slope, "residual": self.residual, "log_growth": self.log_growth,
            "divergence_time": self.divergence_time,
            "divergence_iqr": list(self.divergence_iqr) if self.divergence_iqr else None,
            "earliest_divergence": self.earliest_divergence,
        }


@dataclass(frozen=True, eq=False)
class BlowupReport:
    classification: str
    evidence: list[RungEvidence]
    divergence_time: float | None
    divergence_spread: float | None
    ladder: list[Rung]
    earliest_divergence: float | None = None
    note: str = ("finite-time-divergence is an operational label: the diverged fraction "
                 "tends to one with a divergence time that is stable under refinement")

    def as_dict(self) -> dict:
        return {
            "classification": self.classification,
            "divergence_time": self.divergence_time,
            "divergence_spread": self.divergence_spread,
            "earliest_divergence": self.earliest_divergence,
            "ladder": [vars(r) for r in self.ladder],
            "evidence": [e.as_dict() for e in self.evidence],
            "note": self.note,
        }


def rung_of(ensemble) -> Rung:
    cfg = ensemble.config
    return Rung(cfg.time.dt, cfg.grid.dx, cfg.noise.levy.eps_min, ensemble.n_replicas)


def _check_refined(ladder: Sequence[Rung]) -> None:
    for a, b in zip(ladder[:-1], ladder[1:]):
        if b.dt > a.dt or b.dx > a.dx or b.replicas < a.replicas:
            raise ConfigurationError("ladder rungs must be successively refined")
        if (b.dt, b.dx, b.replicas) == (a.dt, a.dx, a.replicas):
            raise ConfigurationError("ladder rungs must differ")


def _rung_evidence(ensemble, p: float | None) -> RungEvidence:
    frac = ensemble.diverged_fraction()
    series = averaged_moment(ensemble, p)
    vals = series.estimates[:, 0]
    usable = series.pre_divergence & np.isfinite(vals) & (vals > 0)
    slope = resid = growth = None
    if usable.sum() >= 3:
        t, v = series.times[usable], vals[usable]
        fit = stats.linregress(t, np.log(v))
        r = np.log(v) - (fit.intercept + fit.slope * t)
        slope, resid = float(fit.slope), float(np.sqrt(np.mean(r**2)))
        growth = float(np.max(np.log(v / v[0])))
    dtimes = ensemble.divergence_time[np.isfinite(ensemble.divergence_time)]
    if dtimes.size:
        med = float(np.median(dtimes))
        iqr = (float(np.percentile(dtimes, 25)), float(np.percentile(dtimes, 75)))
        early = float(np.quantile(ensemble.divergence_time, EARLY_QUANTILE))
        early = early if math.isfinite(early) else None
    else:
        med, iqr, early = None, None, None
    return RungEvidence(rung_of(ensemble), ensemble.times.copy(), frac, slope, resid, growth,
                        med, iqr, early)


def detect_blowup(ladder_runs: Sequence, p: float | None = None,
                  thresholds: BlowupThresholds = BlowupThresholds()) -> BlowupReport:
    """Classify growth across a refinement ladder (coarsest rung first).

    Raises
    ------
    ConfigurationError
        With fewer than three rungs or rungs that are not successively refined.
    """
    if len(ladder_runs) < 3:
        raise ConfigurationError("blow-up detection needs at least three ladder rungs")
    ladder = [rung_of(e) for e in ladder_runs]
    _check_refined(ladder)
    ev = [_rung_evidence(e, p) for e in ladder_runs]
    th = thresholds

    final = np.array([e.diverged_fraction[-1] for e in ev])
    top = [e.divergence_time for e in ev[-2:]]
    spread = None
    if all(t is not None for t in top):
        spread = abs(top[1] - top[0]) / (0.5 * (top[1] + top[0]))
    t_div = ev[-1].divergence_time

    if np.all(final >= th.diverged) and spread is not None and spread < th.spread:
        label = "finite-time-divergence"
    elif np.all(final == 0) and all(e.log_growth is not None for e in ev):
        if all(e.log_growth <= th.bounded for e in ev):
            label = "bounded"
        elif all(e.residual < th.residual and e.slope > 0 for e in ev):
            label = "exponential-growth"
        else:
            label = "indeterminate"
    else:
        label = "indeterminate"
    return BlowupReport(label, ev, t_div, spread, ladder, ev[-1].earliest_divergence)
