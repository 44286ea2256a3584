"""Symmetric alpha-stable heat kernels, their two-sided estimates and the
Dalang integral.

The kernel ``p(t, x)`` is the transition density of the process generated by
``-(-Delta)^{alpha/2}``, i.e. the inverse Fourier transform of
``exp(-t |xi|^alpha)``.  At ``alpha = 2`` this is the ``e^{t Delta}`` kernel
``(4 pi t)^{-d/2} exp(-|x|^2 / 4t)``; at ``alpha = 1`` the Poisson (Cauchy)
kernel.  Other indices are evaluated in one dimension by Fourier inversion

    p(t, x) = (1/pi) int_0^inf exp(-t xi^alpha) cos(xi x) dxi

truncated where ``exp(-t xi^alpha) < 1e-14``, switching to the convergent /
asymptotic tail series far from the origin.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Union

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

from .errors import (
    DegenerateInputError,
    DomainError,
    InvalidStateError,
    UnsupportedError,
)

TRUNCATION_LEVEL = 1e-14
# |x| t^{-1/alpha} beyond which the tail series replaces quadrature
ASYMPTOTIC_SWITCH = 50.0
ASYMPTOTIC_TERMS = 16
TABLE_NODES = 1601

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class KernelSpec:
    """Stability index, dimension and quadrature controls.

    Parameters
    ----------
    alpha : float
        Stability index in (0, 2].
    d : int
        Spatial dimension.  ``d >= 2`` is only available for the closed-form
        indices ``alpha in {1, 2}``.
    cutoff : float, optional
        Fixed frequency cutoff for the Fourier inversion.  By default the
        cutoff adapts to ``t`` so that ``exp(-t cutoff^alpha) = 1e-14``.
    node_limit : int
        Subinterval limit handed to the adaptive quadrature.
    """

    alpha: float
    d: int = 1
    cutoff: float | None = None
    node_limit: int = 400

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= 2.0):
            raise DomainError(f"alpha must lie in (0, 2], got {self.alpha}")
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.d}")

    @property
    def closed_form(self) -> bool:
        return self.alpha in (1.0, 2.0)

    @property
    def supported(self) -> bool:
        return self.closed_form or self.d == 1

    def require_supported(self) -> None:
        if not self.supported:
            raise UnsupportedError(
                f"alpha={self.alpha} is only implemented for d=1 (got d={self.d})"
            )

    def characteristic_exponent(self, xi: ArrayLike) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.d > 1:
            xi = np.linalg.norm(xi, axis=-1)
        return np.abs(xi) ** self.alpha


def _check_time(t: ArrayLike) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("time must be strictly positive")
    return t


def _radius(spec: KernelSpec, x: ArrayLike) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if spec.d == 1:
        return np.abs(x)
    if x.shape[-1:] != (spec.d,):
        raise DomainError(f"points must have trailing dimension {spec.d}")
    return np.linalg.norm(x, axis=-1)


def _series_coefficients(alpha: float, terms: int = ASYMPTOTIC_TERMS) -> np.ndarray:
    k = np.arange(1, terms + 1)
    mag = np.exp(special.gammaln(k * alpha + 1.0) - special.gammaln(k + 1.0))
    return (-1.0) ** (k + 1) * mag * np.sin(k * np.pi * alpha / 2.0) / np.pi


def _tail_density(t: float, r: float, alpha: float) -> float:
    k = np.arange(1, ASYMPTOTIC_TERMS + 1)
    c = _series_coefficients(alpha)
    return float(np.sum(c * t**k * r ** (-(k * alpha + 1.0))))


def _tail_survival(t: float, r: float, alpha: float) -> float:
    k = np.arange(1, ASYMPTOTIC_TERMS + 1)
    c = _series_coefficients(alpha)
    return float(np.sum(c * t**k * r ** (-(k * alpha)) / (k * alpha)))


def _xi_max(spec: KernelSpec, t: float) -> float:
    if spec.cutoff is not None:
        return spec.cutoff
    return (-math.log(TRUNCATION_LEVEL) / t) ** (1.0 / spec.alpha)


def _quiet(fn):
    # roundoff warnings from QAWO near the 1e-15 floor are expected noise
    def wrapper(*args):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            return fn(*args)
    return wrapper


@_quiet
def _fourier_density(spec: KernelSpec, t: float, r: float) -> float:
    a = spec.alpha
    if r * t ** (-1.0 / a) >= ASYMPTOTIC_SWITCH:
        return _tail_density(t, r, a)
    xi_max = _xi_max(spec, t)
    f = lambda xi: math.exp(-t * xi**a)
    if r == 0.0:
        val, _ = integrate.quad(f, 0.0, xi_max, epsabs=1e-15, epsrel=1e-12,
                                limit=spec.node_limit)
    else:
        val, _ = integrate.quad(f, 0.0, xi_max, weight="cos", wvar=r,
                                epsabs=1e-15, epsrel=1e-12, limit=spec.node_limit)
    return max(val / math.pi, 0.0)


@_quiet
def _fourier_cdf(spec: KernelSpec, t: float, x: float) -> float:
    a = spec.alpha
    if x == 0.0:
        return 0.5
    r = abs(x)
    if r * t ** (-1.0 / a) >= ASYMPTOTIC_SWITCH:
        half = 0.5 - _tail_survival(t, r, a)
    else:
        xi_max = _xi_max(spec, t)
        cut = min(xi_max, 1.0 / r)
        near, _ = integrate.quad(
            lambda xi: math.exp(-t * xi**a) * r * np.sinc(xi * r / math.pi),
            0.0, cut, epsabs=1e-15, epsrel=1e-12, limit=spec.node_limit,
        )
        far = 0.0
        if cut < xi_max:
            far, _ = integrate.quad(
                lambda xi: math.exp(-t * xi**a) / xi, cut, xi_max,
                weight="sin", wvar=r, epsabs=1e-15, epsrel=1e-12,
                limit=spec.node_limit,
            )
        half = (near + far) / math.pi
    return 0.5 + math.copysign(half, x)


def density(spec: KernelSpec, t: ArrayLike, x: ArrayLike) -> np.ndarray | float:
    """Transition density ``p(t, x)``.

    ``t`` and ``x`` broadcast against each other; for ``d >= 2`` the last axis
    of ``x`` holds coordinates.  Returns a float for scalar input.

    Raises
    ------
    DomainError
        If any ``t <= 0``.
    UnsupportedError
        For ``alpha not in {1, 2}`` with ``d >= 2``.
    """
    spec.require_supported()
    t = _check_time(t)
    r = _radius(spec, x)
    d = spec.d
    if spec.alpha == 2.0:
        out = (4.0 * np.pi * t) ** (-d / 2.0) * np.exp(-(r**2) / (4.0 * t))
    elif spec.alpha == 1.0:
        norm = special.gamma((d + 1) / 2.0) / np.pi ** ((d + 1) / 2.0)
        out = norm * t / (t**2 + r**2) ** ((d + 1) / 2.0)
    else:
        out = np.vectorize(lambda tt, rr: _fourier_density(spec, tt, rr),
                           otypes=[float])(t, r)
    return out.item() if np.ndim(out) == 0 else out


def cdf(spec: KernelSpec, t: ArrayLike, x: ArrayLike) -> np.ndarray | float:
    """One-dimensional distribution function ``P(X_t <= x)``."""
    if spec.d != 1:
        raise UnsupportedError("distribution function is one-dimensional")
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    if spec.alpha == 2.0:
        out = special.ndtr(x / np.sqrt(2.0 * t))
    elif spec.alpha == 1.0:
        out = 0.5 + np.arctan(x / t) / np.pi
    else:
        out = np.vectorize(lambda tt, xx: _fourier_cdf(spec, tt, xx),
                           otypes=[float])(t, x)
    return out.item() if np.ndim(out) == 0 else out


class KernelTable:
    """Vectorised ``p`` and ``P`` for lattice work.

    Closed forms are used directly.  Other indices tabulate the unit-time
    profile ``p(1, y)`` on ``[0, 50]`` (cubic spline; the distribution function
    is its antiderivative) and use the tail series beyond.  Read-only after
    construction.
    """

    def __init__(self, spec: KernelSpec):
        if spec.d != 1:
            raise UnsupportedError("lattice kernels are one-dimensional")
        self.spec = spec
        self.alpha = spec.alpha
        self._spline = None
        self._antider = None
        if not spec.closed_form:
            y = np.linspace(0.0, ASYMPTOTIC_SWITCH, TABLE_NODES)
            p1 = np.array([_fourier_density(spec, 1.0, yy) for yy in y])
            self._spline = CubicSpline(y, p1, bc_type=((1, 0.0), "not-a-knot"))
            self._antider = self._spline.antiderivative()

    def pdf(self, t: ArrayLike, x: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        a = self.alpha
        if a == 2.0:
            return np.exp(-(x**2) / (4.0 * t)) / np.sqrt(4.0 * np.pi * t)
        if a == 1.0:
            return t / (np.pi * (t**2 + x**2))
        scale = t ** (-1.0 / a)
        y = np.abs(x) * scale
        y, scale = np.broadcast_arrays(y, scale)
        out = np.empty(y.shape)
        near = y < ASYMPTOTIC_SWITCH
        out[near] = self._spline(y[near])
        far = ~near
        if np.any(far):
            k = np.arange(1, ASYMPTOTIC_TERMS + 1)
            c = _series_coefficients(a)
            yf = y[far][:, None]
            out[far] = np.sum(c * yf ** (-(k * a + 1.0)), axis=1)
        return np.maximum(out, 0.0) * scale

    def cdf(self, t: ArrayLike, x: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        a = self.alpha
        if a == 2.0:
            return special.ndtr(x / np.sqrt(2.0 * t))
        if a == 1.0:
            return 0.5 + np.arctan(x / t) / np.pi
        y = x * t ** (-1.0 / a)
        y = np.asarray(y, dtype=float)
        ay = np.abs(y)
        half = np.empty(ay.shape)
        near = ay < ASYMPTOTIC_SWITCH
        half[near] = self._antider(ay[near])
        far = ~near
        if np.any(far):
            k = np.arange(1, ASYMPTOTIC_TERMS + 1)
            c = _series_coefficients(a)
            yf = ay[far][:, None]
            half[far] = 0.5 - np.sum(c * yf ** (-(k * a)) / (k * a), axis=1)
        return 0.5 + np.sign(y) * np.clip(half, 0.0, 0.5)


@lru_cache(maxsize=16)
def kernel_table(spec: KernelSpec) -> KernelTable:
    """Shared :class:`KernelTable` per spec (built once, then read-only)."""
    return KernelTable(spec)


# ---------------------------------------------------------------------------
# Semigroup action
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantFunction:
    value: float

    def __post_init__(self) -> None:
        if self.value < 0:
            raise DomainError("initial data must be nonnegative")

    @property
    def is_zero(self) -> bool:
        return self.value == 0.0


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-constant function on uniform cells centred at ``nodes``.

    Zero outside the cells.
    """

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.size == 0:
            raise DomainError("empty grid")
        if nodes.shape != values.shape or nodes.ndim != 1:
            raise DomainError("nodes and values must be matching 1-D arrays")
        if np.any(values < 0):
            raise DomainError("initial data must be nonnegative")
        if nodes.size > 1:
            h = np.diff(nodes)
            if not np.allclose(h, h[0], rtol=1e-9, atol=0.0) or h[0] <= 0:
                raise DomainError("grid must be uniform and increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @property
    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0]) if self.nodes.size > 1 else 1.0

    @property
    def edges(self) -> np.ndarray:
        h = self.spacing
        return np.append(self.nodes - h / 2.0, self.nodes[-1] + h / 2.0)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values > 0)

    @classmethod
    def indicator(cls, a: float, b: float, n: int = 200, height: float = 1.0) -> "GridFunction":
        """``height * 1_[a, b]`` with cells tiling ``[a, b]`` exactly."""
        h = (b - a) / n
        nodes = a + h * (np.arange(n) + 0.5)
        return cls(nodes, np.full(n, float(height)))

    @classmethod
    def sample(cls, f: Callable[[np.ndarray], np.ndarray], a: float, b: float, n: int) -> "GridFunction":
        h = (b - a) / n
        nodes = a + h * (np.arange(n) + 0.5)
        return cls(nodes, np.asarray(f(nodes), dtype=float))


InitialData = Union[ConstantFunction, GridFunction, float]


def _as_initial(u0: InitialData) -> ConstantFunction | GridFunction:
    if isinstance(u0, (ConstantFunction, GridFunction)):
        return u0
    return ConstantFunction(float(u0))


def semigroup_apply(spec: KernelSpec, t: float, u0: InitialData, x: ArrayLike) -> np.ndarray | float:
    """``(P_t u0)(x) = int p(t, x - y) u0(y) dy``.

    Grid data are integrated exactly cell by cell through the distribution
    function, so the result stays accurate as ``t -> 0``.
    """
    spec.require_supported()
    _check_time(t)
    u0 = _as_initial(u0)
    x = np.asarray(x, dtype=float)
    if isinstance(u0, ConstantFunction):
        out = np.full(x.shape if spec.d == 1 else x.shape[:-1], u0.value)
        return out.item() if out.ndim == 0 else out
    if spec.d != 1:
        raise UnsupportedError("grid initial data are one-dimensional")
    table = kernel_table(spec)
    edges = u0.edges
    c = table.cdf(t, x[..., None] - edges)
    # cell j spans [e_j, e_{j+1}]: mass = P(x - e_j) - P(x - e_{j+1})
    mass = c[..., :-1] - c[..., 1:]
    out = np.sum(mass * u0.values, axis=-1)
    return out.item() if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Two-sided estimate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelBoundConstants:
    c_lower: float
    c_upper: float

    @property
    def valid(self) -> bool:
        return (
            math.isfinite(self.c_lower) and math.isfinite(self.c_upper)
            and 0.0 < self.c_lower <= self.c_upper
        )


def estimate_scale(spec: KernelSpec, t: ArrayLike, r: ArrayLike) -> np.ndarray | float:
    """``min(t^{-d/alpha}, t / r^{d+alpha})`` with the ``r = 0`` branch."""
    t = _check_time(t)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("radius must be nonnegative")
    near = t ** (-spec.d / spec.alpha)
    with np.errstate(divide="ignore"):
        far = np.where(r > 0, t / np.where(r > 0, r, 1.0) ** (spec.d + spec.alpha), np.inf)
    out = np.minimum(near, far)
    return out.item() if np.ndim(out) == 0 else out


def estimate_bounds(spec: KernelSpec, consts: KernelBoundConstants, t: ArrayLike, r: ArrayLike):
    """Return ``(c_lower * m, c_upper * m)`` for ``m = estimate_scale(t, r)``."""
    if not consts.valid:
        raise InvalidStateError(f"kernel bound constants are not calibrated: {consts}")
    m = estimate_scale(spec, t, r)
    return consts.c_lower * m, consts.c_upper * m


def default_bound_grid() -> tuple[np.ndarray, np.ndarray]:
    t = np.logspace(-2, 2, 41)
    r = np.concatenate(([0.0], np.logspace(-2, 2, 40)))
    return t, r


def _ratio_grid(spec: KernelSpec, t_grid, r_grid) -> np.ndarray:
    tt, rr = np.meshgrid(np.asarray(t_grid, float), np.asarray(r_grid, float), indexing="ij")
    if spec.d == 1:
        p = density(spec, tt, rr)
    else:
        pts = np.zeros(tt.shape + (spec.d,))
        pts[..., 0] = rr
        p = density(spec, tt, pts)
    return np.asarray(p) / np.asarray(estimate_scale(spec, tt, rr))


def calibrate_bounds(spec: KernelSpec, t_grid=None, r_grid=None, margin: float = 0.02) -> KernelBoundConstants:
    """Fit the two-sided estimate constants by an exhaustive grid sweep.

    The extreme ratios ``p / m`` on the grid are widened by ``margin`` so that
    the sandwich also holds between grid points.

    Raises
    ------
    InvalidStateError
        If no strictly positive lower constant exists on the grid (the
        density decays faster than the polynomial envelope).
    """
    if t_grid is None or r_grid is None:
        dt, dr = default_bound_grid()
        t_grid = dt if t_grid is None else t_grid
        r_grid = dr if r_grid is None else r_grid
    ratio = _ratio_grid(spec, t_grid, r_grid)
    lo = float(np.min(ratio)) * (1.0 - margin)
    hi = float(np.max(ratio)) * (1.0 + margin)
    consts = KernelBoundConstants(lo, hi)
    if not consts.valid:
        raise InvalidStateError(
            f"no positive lower constant for alpha={spec.alpha}: min p/m on grid is {np.min(ratio):.3e}"
        )
    return consts


def count_bound_violations(spec: KernelSpec, consts: KernelBoundConstants, t_grid, r_grid) -> int:
    ratio = _ratio_grid(spec, t_grid, r_grid)
    return int(np.sum((ratio < consts.c_lower) | (ratio > consts.c_upper)))


def origin_lower_constant(spec: KernelSpec, factor: float = 2.0, r_grid=None) -> float:
    """Largest ``c`` with ``p(factor * r, 0) >= c * r^{-d/alpha}`` on a grid.

    This is the constant the compensated comparison ODE needs for the
    diagonal ``p(2(t - s), 0)``.
    """
    r = np.logspace(-3, 3, 61) if r_grid is None else np.asarray(r_grid, float)
    origin = np.zeros(r.shape) if spec.d == 1 else np.zeros(r.shape + (spec.d,))
    vals = np.asarray(density(spec, factor * r, origin)) * r ** (spec.d / spec.alpha)
    return float(np.min(vals))


# ---------------------------------------------------------------------------
# Dalang integral
# ---------------------------------------------------------------------------


def dalang_upsilon(spec: KernelSpec, beta: float) -> float:
    """``(1/2pi) int_R dxi / (beta + 2 |xi|^alpha)``; ``math.inf`` when divergent.

    The integral is finite only for ``d = 1`` and ``alpha > 1``.
    """
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    if spec.d != 1 or spec.alpha <= 1.0:
        return math.inf
    a = spec.alpha
    val, _ = integrate.quad(lambda xi: 1.0 / (beta + 2.0 * xi**a), 0.0, np.inf,
                            epsabs=1e-14, epsrel=1e-12, limit=500)
    return val / math.pi


# ---------------------------------------------------------------------------
# Lower envelopes of P_t u0
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LowerEnvelope:
    """Certified ``(P_t u0)(x) >= c1 t^{-d/alpha}`` for ``|x| <= t^{1/alpha}``."""

    c1: float
    alpha: float
    d: int
    t_grid: np.ndarray

    def radius(self, t: float) -> float:
        return t ** (1.0 / self.alpha)

    def bound(self, t: ArrayLike) -> np.ndarray | float:
        return self.c1 * np.asarray(t, float) ** (-self.d / self.alpha)


def pt_u0_lower_envelope(spec: KernelSpec, u0: InitialData, T: float = 1.0,
                         t_max: float = 100.0, n_t: int = 25, n_x: int = 21) -> LowerEnvelope:
    """Certify ``c1`` by minimising ``t^{d/alpha} (P_t u0)(x)`` over
    ``t in [T, t_max]`` and ``|x| <= t^{1/alpha}`` on a grid.
    """
    u0 = _as_initial(u0)
    if u0.is_zero:
        raise DegenerateInputError("initial data vanish identically")
    t_grid = np.logspace(np.log10(T), np.log10(t_max), n_t)
    worst = math.inf
    for t in t_grid:
        rad = t ** (1.0 / spec.alpha)
        x = np.linspace(-rad, rad, n_x)
        if spec.d > 1:
            x = np.stack([x] + [np.zeros_like(x)] * (spec.d - 1), axis=-1)
        vals = np.asarray(semigroup_apply(spec, t, u0, x))
        worst = min(worst, float(np.min(vals)) * t ** (spec.d / spec.alpha))
    return LowerEnvelope(worst, spec.alpha, spec.d, t_grid)


def shifted_lower_constant(spec: KernelSpec, u0: InitialData, t0: float = 1.0, eta: float = 1.0,
                           t_grid=None, x_grid=None) -> float:
    """Grid-certified ``c(t0)`` with ``(P_{t+t0} u0)(x) >= c(t0) p(t + eta, x)``."""
    u0 = _as_initial(u0)
    if u0.is_zero:
        raise DegenerateInputError("initial data vanish identically")
    if t0 < 1.0 or eta <= 0.0:
        raise DomainError("need t0 >= 1 and eta > 0")
    if spec.d != 1:
        raise UnsupportedError("shifted lower constant is computed in d = 1")
    t_grid = np.concatenate(([0.0], np.logspace(-2, 2, 17))) if t_grid is None else np.asarray(t_grid, float)
    x_grid = np.linspace(-10.0, 10.0, 41) if x_grid is None else np.asarray(x_grid, float)
    table = kernel_table(spec)
    worst = math.inf
    for t in t_grid:
        num = np.asarray(semigroup_apply(spec, t + t0, u0, x_grid))
        den = table.pdf(t + eta, x_grid)
        worst = min(worst, float(np.min(num / den)))
    return worst
