"""Lattice discretisation of the mild formulation

    u(t, x) = (P_t u0)(x) + lambda int_0^t int int p(t - s, x - y) sigma(u(s-, y), h) N(ds, dy, dh)

(with ``N`` replaced by the compensated measure for the compensated
equation).  One step from ``t_n`` to ``t_{n+1} = t_n + dt`` applies the heat
stencil to the field, then adds for every atom ``(s_k, X_k, Z_k)`` in
``(t_n, t_{n+1}]`` the cell-averaged kernel ``p(t_{n+1} - s_k, . - X_k)``
scaled by ``lambda sigma(u(t_n, X_k_hat), Z_k)``, where ``X_k_hat`` is the
node nearest to ``X_k``.  The compensated scheme subtracts the conditional
mean of that sum.

The box ``[-L, L]`` is tiled by ``n_x`` cells with nodes at their centres;
kernel mass leaving the box is lost.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import fft as sp_fft
from scipy import ndimage
from scipy.special import roots_legendre

from .errors import ConfigurationError, DomainError
from .levy_noise import LevyMeasureSpec, PointSet, Weight, WeightSpec, sample_points, weight_integrals
from .rng import StreamFactory
from .stable_kernel import KernelSpec, KernelTable, kernel_table

logger = logging.getLogger(__name__)

NOISE_CELL = 1.0  # time length of one counter-addressed noise block
DEFAULT_CAP = 1e12


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearSigma:
    """``sigma(x, h) = scale * weight(h) * x``."""

    weight: Weight = Weight(1.0)
    scale: float = 1.0

    kind = "linear"
    superlinear = False

    @property
    def exponent(self) -> float:
        return 1.0

    @property
    def L_sigma(self) -> float:
        return self.scale

    @property
    def Lip_sigma(self) -> float:
        return self.scale

    def state(self, x):
        return self.scale * np.asarray(x, dtype=float)

    def __call__(self, x, h):
        return self.weight(h) * self.state(x)

    def lipschitz(self, h, level: float | None = None):
        return self.scale * self.weight(h)


@dataclass(frozen=True)
class PowerLawSigma:
    """``sigma(x, h) = scale * weight(h) * |x|^exponent`` (times ``sign(x)`` if ``signed``)."""

    weight: Weight
    exponent: float
    signed: bool = False
    scale: float = 1.0

    kind = "powerlaw"
    superlinear = True

    def __post_init__(self) -> None:
        if not self.exponent > 1.0:
            raise DomainError(f"power-law exponent must exceed 1, got {self.exponent}")

    @property
    def L_sigma(self) -> float:
        return self.scale

    def state(self, x):
        x = np.asarray(x, dtype=float)
        out = self.scale * np.abs(x) ** self.exponent
        return np.sign(x) * out if self.signed else out

    def __call__(self, x, h):
        return self.weight(h) * self.state(x)

    def lipschitz(self, h, level: float):
        """Lipschitz constant on ``[-level, level]``."""
        return self.exponent * level ** (self.exponent - 1.0) * self.scale * self.weight(h)


@dataclass(frozen=True)
class TruncatedSigma:
    """``sigma_N(x, h) = sigma(clip(x, -N, N), h)``: globally Lipschitz."""

    inner: Union[LinearSigma, PowerLawSigma]
    level: float

    kind = "truncated"
    superlinear = False

    @property
    def weight(self) -> Weight:
        return self.inner.weight

    @property
    def exponent(self) -> float:
        return self.inner.exponent

    @property
    def L_sigma(self) -> float:
        return self.inner.L_sigma

    def state(self, x):
        return self.inner.state(np.clip(np.asarray(x, dtype=float), -self.level, self.level))

    def __call__(self, x, h):
        return self.weight(h) * self.state(x)

    def lipschitz(self, h, level: float | None = None):
        return self.inner.lipschitz(h, self.level)


SigmaSpec = Union[LinearSigma, PowerLawSigma, TruncatedSigma]


def truncate_sigma(sigma: SigmaSpec, N: float) -> TruncatedSigma:
    """Cut ``sigma`` off at level ``N`` (re-truncating a truncated sigma replaces the level)."""
    if not N > 0:
        raise DomainError(f"truncation level must be positive, got {N}")
    inner = sigma.inner if isinstance(sigma, TruncatedSigma) else sigma
    return TruncatedSigma(inner, float(N))


# ---------------------------------------------------------------------------
# Initial conditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantInitial:
    c1: float
    kind = "constant"

    def __post_init__(self) -> None:
        if not self.c1 > 0:
            raise DomainError("constant initial data must be positive")

    @property
    def bounded_below(self) -> bool:
        return True

    def values(self, x):
        return np.full(np.shape(x), float(self.c1))


@dataclass(frozen=True)
class BumpInitial:
    """``height * 1{|x - center| <= radius}``."""

    center: float = 0.0
    radius: float = 1.0
    height: float = 1.0
    kind = "bump"

    def __post_init__(self) -> None:
        if not (self.radius > 0 and self.height > 0):
            raise DomainError("bump needs positive radius and height")

    @property
    def bounded_below(self) -> bool:
        return False

    def values(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x - self.center) <= self.radius, float(self.height), 0.0)


@dataclass(frozen=True)
class ZeroInitial:
    kind = "zero"

    @property
    def bounded_below(self) -> bool:
        return False

    def values(self, x):
        return np.zeros(np.shape(x))


InitialCondition = Union[ConstantInitial, BumpInitial, ZeroInitial]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


NOISE_TYPES = ("compensated", "noncompensated")


@dataclass(frozen=True)
class NoiseConfig:
    kind: str
    levy: LevyMeasureSpec
    weights: WeightSpec
    lam: float


@dataclass(frozen=True)
class GridConfig:
    L: float = 10.0
    n_x: int = 256

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.n_x

    @property
    def nodes(self) -> np.ndarray:
        return -self.L + self.dx * (np.arange(self.n_x) + 0.5)

    @property
    def box(self) -> tuple[float, float]:
        return (-self.L, self.L)


@dataclass(frozen=True)
class TimeConfig:
    dt: float = 1e-3
    T: float = 1.0
    snapshots: tuple[float, ...] | None = None

    def snapshot_times(self) -> np.ndarray:
        if self.snapshots is None:
            return np.linspace(0.0, self.T, 21)
        return np.asarray(sorted(set(float(s) for s in self.snapshots)))


@dataclass(frozen=True)
class SimConfig:
    kernel: KernelSpec
    noise: NoiseConfig
    sigma: SigmaSpec
    u0: InitialCondition
    grid: GridConfig = GridConfig()
    time: TimeConfig = TimeConfig()
    overflow_cap: float = DEFAULT_CAP
    seed: int = 0
    replicas: int = 1000
    moment_order: int | None = None

    @property
    def p(self) -> int:
        """Moment order: 2 for compensated noise, 1 otherwise, unless overridden."""
        if self.moment_order is not None:
            return self.moment_order
        return 2 if self.noise.kind == "compensated" else 1

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        """Raise :class:`ConfigurationError` on any violated invariant."""
        t, g, nz = self.time, self.grid, self.noise
        if not (t.dt > 0 and math.isfinite(t.dt)):
            raise ConfigurationError(f"time step must be positive, got {t.dt}")
        if not t.T > 0:
            raise ConfigurationError(f"horizon must be positive, got {t.T}")
        if not (g.L > 0 and g.n_x >= 3):
            raise ConfigurationError("grid needs L > 0 and at least 3 nodes")
        if nz.kind not in NOISE_TYPES:
            raise ConfigurationError(f"noise type must be one of {NOISE_TYPES}, got {nz.kind!r}")
        if not nz.lam >= 0:
            raise ConfigurationError("noise level must be nonnegative")
        if nz.kind == "compensated" and self.kernel.d != 1:
            raise ConfigurationError("compensated noise requires d = 1")
        if self.kernel.d != 1:
            raise ConfigurationError("the lattice solver is one-dimensional")
        snaps = t.snapshot_times()
        if snaps.size == 0 or snaps[0] < 0 or snaps[-1] > t.T * (1 + 1e-12):
            raise ConfigurationError("snapshot times must lie in [0, T]")
        if self.replicas < 1:
            raise ConfigurationError("need at least one replica")
        if not self.overflow_cap > 0:
            raise ConfigurationError("overflow cap must be positive")
        if self.moment_order is not None and self.moment_order < 1:
            raise ConfigurationError("moment order must be >= 1")

    def weight_report(self):
        return weight_integrals(self.noise.levy, self.noise.weights)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldState:
    t: float
    values: np.ndarray
    diverged: bool
    max_abs: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: list[FieldState]
    diverged: bool
    divergence_time: float | None


@dataclass(eq=False)
class Ensemble:
    """Snapshots of all replicas.

    ``values[r, s]`` is the field of replica ``r`` at ``times[s]`` (NaN once
    the replica has diverged); ``max_abs[r, s]`` the running maximum of
    ``|u|`` up to that snapshot.
    """

    config: SimConfig
    x: np.ndarray
    times: np.ndarray
    values: np.ndarray
    diverged: np.ndarray
    divergence_time: np.ndarray
    max_abs: np.ndarray
    replica_ids: np.ndarray
    n_points: int = 0

    @property
    def n_replicas(self) -> int:
        return int(self.values.shape[0])

    def diverged_at(self) -> np.ndarray:
        """Boolean ``(R, S)``: replica diverged at or before each snapshot."""
        return self.divergence_time[:, None] <= self.times[None, :] + 1e-12

    def diverged_fraction(self) -> np.ndarray:
        return self.diverged_at().mean(axis=0)

    def trajectory(self, r: int) -> Trajectory:
        states = []
        div = self.diverged_at()[r]
        for s, t in enumerate(self.times):
            states.append(FieldState(float(t), self.values[r, s].copy(), bool(div[s]),
                                     float(self.max_abs[r, s])))
        dt = float(self.divergence_time[r])
        return Trajectory(states, bool(self.diverged[r]), dt if math.isfinite(dt) else None)


# ---------------------------------------------------------------------------
# Discrete operators
# ---------------------------------------------------------------------------


def _stencil_halfwidth(spec: KernelSpec, t: float, dx: float, n: int) -> int:
    if spec.alpha == 2.0:
        return int(min(n - 1, math.ceil(9.0 * math.sqrt(2.0 * t) / dx) + 1))
    return n - 1


def heat_stencil(table: KernelTable, dt: float, dx: float, n: int) -> np.ndarray:
    """Lattice weights of ``P_dt``.

    Off-centre weights sample ``p(dt, m dx) dx``; the centre weight takes the
    remaining mass of the kernel inside the stencil, so unresolved kernels
    still carry the right jump rates between nodes.
    """
    M = _stencil_halfwidth(table.spec, dt, dx, n)
    m = np.arange(-M, M + 1)
    w = table.pdf(dt, m * dx) * dx
    edge = (M + 0.5) * dx
    target = float(table.cdf(dt, edge) - table.cdf(dt, -edge))
    w[M] = 0.0
    w[M] = max(target - w.sum(), 0.0)
    return w


def _deposit_halfwidth(spec: KernelSpec, dt: float, dx: float, n: int) -> int:
    return _stencil_halfwidth(spec, dt, dx, n)


def cell_average(table: KernelTable, tau, z, dx: float):
    """``(1/dx) int_{z - dx/2}^{z + dx/2} p(tau, y) dy``."""
    return (table.cdf(tau, z + dx / 2.0) - table.cdf(tau, z - dx / 2.0)) / dx


def compensator_stencil(table: KernelTable, dt: float, dx: float, n: int, nodes: int = 24) -> np.ndarray:
    """``c_m = dx * E[cell_average(tau, m dx - X)]`` for ``tau ~ U(0, dt)``,
    ``X ~ U(cell 0)``: the conditional mean deposit per unit source."""
    M = _deposit_halfwidth(table.spec, dt, dx, n)
    m = np.arange(-M, M + 1)
    z, w = roots_legendre(nodes)
    s = (z + 1.0) / 2.0
    # tau = dt s^2 clusters nodes where the kernel is sharp
    tau = dt * s**2
    wt = w / 2.0 * 2.0 * s
    y = dx * (z / 2.0)
    wy = w / 2.0
    acc = np.zeros(m.size)
    for ti, wti in zip(tau, wt):
        q = cell_average(table, ti, m[:, None] * dx - y[None, :], dx)
        acc += wti * (q @ wy)
    return acc * dx


class _Convolver:
    """Zero-padded ``same``-size convolution along the last axis with a fixed
    odd-length stencil; long stencils reuse a precomputed transform."""

    def __init__(self, w: np.ndarray, n: int):
        self.w = w
        self.n = n
        self.M = (w.size - 1) // 2
        self.direct = w.size <= 63
        if not self.direct:
            self.nfft = sp_fft.next_fast_len(n + w.size - 1, real=True)
            self.W = sp_fft.rfft(w, self.nfft)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        if self.direct:
            return ndimage.convolve1d(u, self.w, axis=-1, mode="constant", cval=0.0)
        return self.inverse(sp_fft.rfft(u, self.nfft, axis=-1) * self.W)

    def inverse(self, spectrum: np.ndarray) -> np.ndarray:
        full = sp_fft.irfft(spectrum, self.nfft, axis=-1)
        return full[..., self.M:self.M + self.n]

    def combined(self, other: "_Convolver", u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``self(u) - other(v)`` with a single inverse transform."""
        if self.direct or other.direct or other.nfft != self.nfft:
            return self(u) - other(v)
        return self.inverse(sp_fft.rfft(u, self.nfft, axis=-1) * self.W
                            - sp_fft.rfft(v, self.nfft, axis=-1) * other.W)


# ---------------------------------------------------------------------------
# Noise realisation
# ---------------------------------------------------------------------------


def _sample_ensemble_noise(config: SimConfig, streams: StreamFactory, replicas: np.ndarray):
    levy = config.noise.levy
    n_cells = int(math.ceil(config.time.T / NOISE_CELL - 1e-12))
    box = config.grid.box
    parts, owners = [], []
    for r in replicas:
        for k in range(n_cells):
            pts = sample_points(levy, (k * NOISE_CELL, (k + 1) * NOISE_CELL), box,
                                rng_stream=streams, key=(int(r), k))
            keep = pts.times <= config.time.T
            if np.any(keep):
                parts.append(PointSet(pts.times[keep], pts.positions[keep],
                                      pts.marks[keep], pts.shells[keep]))
                owners.append(np.full(int(keep.sum()), int(r)))
    if not parts:
        return PointSet.empty(), np.empty(0, dtype=int)
    pts = PointSet.concat(parts)
    owner = np.concatenate(owners)
    order = np.argsort(pts.times, kind="stable")
    return (PointSet(pts.times[order], pts.positions[order], pts.marks[order], pts.shells[order]),
            owner[order])


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


def simulate(config: SimConfig, rng_stream: StreamFactory | None = None,
             replicas: Iterable[int] | None = None) -> Ensemble:
    """Run the lattice scheme for a set of replicas.

    Replica ``r`` only reads the noise streams keyed by ``r``, so any replica
    can be reproduced on its own.  A replica whose ``max |u|`` exceeds
    ``overflow_cap`` (or turns non-finite) is flagged diverged at the end of
    that step and frozen.

    Raises
    ------
    ConfigurationError
        If ``config`` violates its invariants.
    """
    config.validate()
    streams = rng_stream or StreamFactory(config.seed)
    rep_ids = np.arange(config.replicas) if replicas is None else np.asarray(list(replicas), dtype=int)
    R = rep_ids.size
    g, tc, nz = config.grid, config.time, config.noise
    x, dx, n = g.nodes, g.dx, g.n_x
    dt = tc.dt
    n_steps = int(round(tc.T / dt))
    snaps = tc.snapshot_times()
    snap_steps = np.rint(snaps / dt).astype(int)
    table = kernel_table(config.kernel)
    heat = heat_stencil(table, dt, dx, n)

    lam = float(nz.lam)
    sigma = config.sigma
    compensated = nz.kind == "compensated"
    if lam > 0:
        points, owner = _sample_ensemble_noise(config, streams, rep_ids)
    else:
        points, owner = PointSet.empty(), np.empty(0, dtype=int)
    # atoms in (t_n, t_{n+1}] belong to step n
    step_of = np.clip(np.ceil(points.times / dt - 1e-9).astype(int) - 1, 0, n_steps - 1)
    bounds = np.searchsorted(step_of, np.arange(n_steps + 1), side="left")
    row_of_rep = {int(r): i for i, r in enumerate(rep_ids)}
    owner_row = np.array([row_of_rep[int(o)] for o in owner], dtype=int)
    node_of = np.clip(np.floor((points.positions + g.L) / dx).astype(int), 0, n - 1)

    W = _deposit_halfwidth(config.kernel, dt, dx, n)
    offsets = np.arange(-W, W + 1)
    comp = None
    if compensated and lam > 0:
        drift = lam * dt * nz.levy.integral(lambda h: float(sigma.weight(h)))
        comp = drift * compensator_stencil(table, dt, dx, n)
        if isinstance(sigma, LinearSigma) and comp.size == heat.size:
            # linear state: fold the compensator into the heat stencil
            heat = heat - sigma.scale * comp
            comp = None

    heat_op = _Convolver(heat, n)
    comp_op = _Convolver(comp, n) if comp is not None else None
    values = np.full((R, snaps.size, n), np.nan)
    max_abs = np.full((R, snaps.size), np.nan)
    divergence_time = np.full(R, np.inf)
    u = np.tile(config.u0.values(x), (R, 1))
    running_max = np.max(np.abs(u), axis=1)
    alive = np.arange(R)          # replica row held by each row of u
    row_pos = np.arange(R)        # replica row -> row in u, -1 once dead

    def record(step: int) -> None:
        for s in np.nonzero(snap_steps == step)[0]:
            values[alive, s] = u
            max_abs[alive, s] = running_max[alive]
            dead = row_pos < 0
            max_abs[dead, s] = running_max[dead]

    record(0)
    for step in range(n_steps):
        if alive.size == 0:
            break
        t_next = (step + 1) * dt
        if comp_op is not None:
            new = heat_op.combined(comp_op, u, sigma.state(u))
        else:
            new = heat_op(u)
        lo, hi = bounds[step], bounds[step + 1]
        if hi > lo:
            rows = row_pos[owner_row[lo:hi]]
            live = rows >= 0
            if np.any(live):
                ks = np.arange(lo, hi)[live]
                rows = rows[live]
                j = node_of[ks]
                amp = lam * sigma(u[rows, j], points.marks[ks])
                tau = np.maximum(t_next - points.times[ks], 1e-12 * dt)
                cols = j[:, None] + offsets[None, :]
                z = (-g.L + dx * (cols + 0.5)) - points.positions[ks][:, None]
                q = cell_average(table, tau[:, None], z, dx)
                ok = (cols >= 0) & (cols < n)
                contrib = np.where(ok, amp[:, None] * q, 0.0)
                np.add.at(new, (np.broadcast_to(rows[:, None], cols.shape), np.clip(cols, 0, n - 1)),
                          contrib)
        u = new
        with np.errstate(invalid="ignore"):
            row_max = np.max(np.abs(u), axis=1)
        bad = ~np.isfinite(row_max) | (row_max > config.overflow_cap)
        running_max[alive] = np.fmax(running_max[alive], np.where(np.isfinite(row_max), row_max, np.inf))
        if np.any(bad):
            gone = alive[bad]
            divergence_time[gone] = t_next
            row_pos[gone] = -1
            alive = alive[~bad]
            u = u[~bad]
            row_pos[alive] = np.arange(alive.size)
        record(step + 1)

    logger.debug("simulated %d replicas, %d atoms, %d diverged", R, len(points),
                 int(np.isfinite(divergence_time).sum()))
    return Ensemble(config=config, x=x, times=snap_steps * dt, values=values,
                    diverged=np.isfinite(divergence_time), divergence_time=divergence_time,
                    max_abs=max_abs, replica_ids=rep_ids, n_points=len(points))


def simulate_replica(config: SimConfig, replica: int = 0,
                     rng_stream: StreamFactory | None = None) -> Trajectory:
    """Single-replica trajectory; identical to row ``replica`` of :func:`simulate`."""
    return simulate(config, rng_stream, replicas=[replica]).trajectory(0)


# ---------------------------------------------------------------------------
# Local existence through truncation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExistenceReport:
    levels: tuple[float, ...]
    sup_moments: tuple[float, ...]
    certified_horizon: float | None
    horizon: float
    times: np.ndarray
    agreement: np.ndarray = field(repr=False)

    @property
    def certified(self) -> bool:
        return self.certified_horizon is not None

    @property
    def message(self) -> str:
        if self.certified_horizon is None:
            return "no certified horizon"
        return f"certified horizon T* = {self.certified_horizon:g} of {self.horizon:g}"


def local_existence_probe(config: SimConfig, levels: Sequence[float], T: float | None = None,
                          z: float = 2.0, interior: float = 0.1) -> ExistenceReport:
    """Run the truncated equations ``sigma_N`` for an increasing ladder of
    levels and find the last snapshot up to which successive levels agree
    within ``z`` combined standard errors at every interior node.

    All levels share the same noise (same seed), so before any field reaches
    the smallest level the runs coincide exactly.
    """
    from .moment_analysis import estimate_moments, interior_mask

    levels = tuple(sorted(float(v) for v in levels))
    if len(levels) < 2:
        raise ConfigurationError("need at least two truncation levels")
    if T is not None:
        config = config.replace(time=dataclasses.replace(config.time, T=T,
                                                         snapshots=tuple(t for t in config.time.snapshot_times() if t <= T) or None))
    horizon = config.time.T
    series = []
    if not config.sigma.superlinear:
        ens = simulate(config)
        s = estimate_moments(ens, config.p)
        series = [s] * len(levels)
    else:
        for N in levels:
            ens = simulate(config.replace(sigma=truncate_sigma(config.sigma, N)))
            series.append(estimate_moments(ens, config.p))
    mask = interior_mask(config.grid.nodes, config.grid.L, interior)
    times = series[0].times
    agree = np.ones(times.size, dtype=bool)
    for a, b in zip(series[:-1], series[1:]):
        diff = np.abs(a.estimates - b.estimates)[:, mask]
        tol = z * np.sqrt(a.stderr**2 + b.stderr**2)[:, mask]
        with np.errstate(invalid="ignore"):
            ok = np.all(diff <= tol + 1e-12 * np.abs(a.estimates[:, mask]), axis=1)
        agree &= ok
    sups = tuple(float(np.nanmax(s.estimates[:, mask])) if np.any(np.isfinite(s.estimates)) else math.inf
                 for s in series)
    if agree.all():
        cert = float(times[-1])
    else:
        first_bad = int(np.argmin(agree))
        cert = float(times[first_bad - 1]) if first_bad > 0 and times[first_bad - 1] > 0 else None
    return ExistenceReport(levels, sups, cert, horizon, times, agree)
