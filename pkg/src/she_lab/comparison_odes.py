"""Comparison ODEs that bound moment functionals from below, their closed
forms and blow-up times, and the regime classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, OutOfRegimeError, SingularParameterError
from .stable_kernel import KernelSpec, dalang_upsilon

BLOWUP_LEVEL = 1e12
BLOWUP_RTOL = 1e-4

REGIMES = ("no-global-solution", "lipschitz-existence", "out-of-framework", "boundary/indeterminate")


@dataclass(frozen=True)
class ComparisonParams:
    """Constants entering the lower-bound ODEs.

    ``c2`` is the lower constant of the kernel at the origin and ``c0`` the
    constant of the weighted functional; ``delta`` is the ODE start time,
    ``eta`` the shift of the weight and ``t0`` the time shift of the field.
    """

    kappa: float = 1.0
    lam: float = 1.0
    L_sigma: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    c0: float = 1.0
    alpha: float = 2.0
    d: int = 1
    exponent: float = 2.0
    delta: float = 1.0
    eta: float = 1.0
    t0: float = 1.0

    def replace(self, **changes) -> "ComparisonParams":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class BoundSolution:
    """Values of a comparison ODE at ``t_eval``; ``inf`` past a certified blow-up."""

    t: np.ndarray
    values: np.ndarray
    blowup_time: float | None
    annotation: str = ""

    @property
    def blows_up(self) -> bool:
        return self.blowup_time is not None


# ---------------------------------------------------------------------------
# Adaptive RK4
# ---------------------------------------------------------------------------


def _rk4(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _tail_time(f, t: float, y: float) -> float:
    """Time left to the singularity from level ``y``, exact for ``f = c y^q``."""
    fy = f(t, y)
    q = math.log(f(t, 2.0 * y) / fy) / math.log(2.0) if fy > 0 else 0.0
    return y / ((q - 1.0) * fy) if q > 1.0 and math.isfinite(q) else 0.0


def rk4_adaptive(f: Callable[[float, float], float], t0: float, y0: float, t_eval: Sequence[float],
                 rtol: float = 1e-8, cap: float = BLOWUP_LEVEL) -> tuple[np.ndarray, float | None]:
    """Scalar RK4 with step doubling and local extrapolation.

    Returns the solution at ``t_eval`` (``inf`` after blow-up) and the
    blow-up time, or ``None``.  The blow-up time is the crossing of ``cap``
    (interpolated in ``log y``) plus the time a locally power-law right-hand
    side needs to go from ``cap`` to infinity.
    """
    t_eval = np.asarray(t_eval, dtype=float)
    out = np.full(t_eval.size, np.nan)
    order = np.argsort(t_eval)
    t, y = float(t0), float(y0)
    span = max(float(t_eval.max()) - t, 1e-300) if t_eval.size else 0.0
    h = span / 64 if span > 0 else 0.0
    blowup = None
    for idx in order:
        target = t_eval[idx]
        if blowup is not None:
            out[idx] = math.inf
            continue
        while t < target - 1e-14 * max(1.0, abs(target)):
            h = min(h, target - t)
            y_full = _rk4(f, t, y, h)
            y_half = _rk4(f, t + h / 2, _rk4(f, t, y, h / 2), h / 2)
            err = abs(y_half - y_full) / 15.0
            scale = rtol * max(abs(y_half), 1e-300)
            if not (math.isfinite(y_half) and math.isfinite(err)) or err > scale:
                h *= 0.25 if not math.isfinite(err) else max(0.1, 0.9 * (scale / err) ** 0.2)
                if h < 1e-15 * max(1.0, abs(t)):
                    blowup = t
                    break
                continue
            y_new = y_half + (y_half - y_full) / 15.0
            if y_new > cap:
                # log y is nearly linear over one accepted step near the crossing
                lo, hi = math.log(max(y, 1e-300)), math.log(y_new)
                frac = (math.log(cap) - lo) / (hi - lo) if hi > lo else 1.0
                blowup = t + frac * h + _tail_time(f, t + frac * h, cap)
                break
            t, y = t + h, y_new
            h *= min(4.0, 0.9 * (scale / err) ** 0.2) if err > 0 else 4.0
        out[idx] = math.inf if blowup is not None else y
    return out, blowup


def solve_refined(f, t0: float, y0: float, t_eval, rtol_start: float = 1e-6,
                  agree: float = BLOWUP_RTOL, max_rounds: int = 8):
    """Tighten the RK4 tolerance until successive blow-up times (or end values)
    agree to ``agree`` relative."""
    rtol = rtol_start
    prev = rk4_adaptive(f, t0, y0, t_eval, rtol)
    for _ in range(max_rounds):
        rtol /= 10.0
        cur = rk4_adaptive(f, t0, y0, t_eval, rtol)
        if prev[1] is not None and cur[1] is not None:
            if abs(cur[1] - prev[1]) <= agree * abs(cur[1]):
                return cur
        elif prev[1] is None and cur[1] is None:
            a, b = prev[0], cur[0]
            if np.all(np.abs(a - b) <= agree * np.maximum(np.abs(b), 1e-300)):
                return cur
        prev = cur
    return prev


# ---------------------------------------------------------------------------
# Compensated noise
# ---------------------------------------------------------------------------


def compensated_seed(params: ComparisonParams) -> float:
    """Start value ``c1^2 delta^(1/alpha)`` from the forcing term of the lower bound."""
    return params.c1**2 * params.delta ** (1.0 / params.alpha)


def compensated_bound_ode(params: ComparisonParams, t_eval, y0: float | None = None) -> BoundSolution:
    """Solve ``Y' = kappa lam^2 L^2 c2 Y^beta t^(-beta/alpha)`` from ``t = delta``.

    Raises
    ------
    OutOfRegimeError
        If ``beta <= 1``.
    DomainError
        For negative ``y0``, ``t_eval < delta`` or ``delta = 0`` with ``y0 > 0``.
    """
    beta, a = params.exponent, params.alpha
    if beta <= 1:
        raise OutOfRegimeError(f"exponent {beta} must exceed 1")
    y0 = compensated_seed(params) if y0 is None else float(y0)
    if y0 < 0:
        raise DomainError("initial value must be nonnegative")
    if params.delta <= 0 and y0 > 0:
        raise DomainError("a positive start value needs delta > 0")
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    if np.any(t_eval < params.delta):
        raise DomainError("evaluation times must not precede delta")
    note = "" if beta < a else "exponent not below alpha: outside the non-existence range, see regime_classify"
    if y0 == 0:
        return BoundSolution(t_eval, np.zeros(t_eval.size), None, note)
    rate = params.kappa * params.lam**2 * params.L_sigma**2 * params.c2

    def f(t, y):
        return rate * max(y, 0.0) ** beta * t ** (-beta / a)

    vals, tb = solve_refined(f, params.delta, y0, t_eval)
    return BoundSolution(t_eval, vals, tb, note)


@dataclass(frozen=True)
class ReferenceComparison:
    t: float
    reference: float
    ode: float
    discrepancy: float


def reference_Y_compensated(params: ComparisonParams, t: float) -> ReferenceComparison:
    """Evaluate ``{kappa lam^2 L^2 c2 alpha/(alpha-beta) t^((alpha-beta)/alpha)}^(1/(1-beta))``
    as written, next to the integrated ODE at the same ``t``.

    This closed form is kept for cross-reference only: it does not solve the
    ODE started from zero (which has the zero solution), so no result depends
    on it.

    Raises
    ------
    SingularParameterError
        If ``beta`` equals ``alpha`` or 1.
    """
    beta, a = params.exponent, params.alpha
    if beta == a or beta == 1:
        raise SingularParameterError("closed form is singular at beta = alpha and beta = 1")
    if not t > 0:
        raise DomainError("t must be positive")
    base = params.kappa * params.lam**2 * params.L_sigma**2 * params.c2 * a / (a - beta) * t ** ((a - beta) / a)
    ref = base ** (1.0 / (1.0 - beta)) if base > 0 else math.nan
    ode = math.nan
    if beta > 1 and t >= params.delta > 0:
        ode = float(compensated_bound_ode(params, [t]).values[0])
    disc = ref - ode if math.isfinite(ode) else math.nan
    return ReferenceComparison(float(t), float(ref), ode, float(disc))


# ---------------------------------------------------------------------------
# Non-compensated noise
# ---------------------------------------------------------------------------


def _check_gamma(params: ComparisonParams) -> None:
    if params.exponent <= 1:
        raise OutOfRegimeError(f"exponent {params.exponent} must exceed 1")
    if params.c1 <= 0:
        raise DomainError("c1 must be positive")


def blowup_time(params: ComparisonParams) -> float:
    """``t* = c1^(1-gamma) / ((gamma-1) kappa lam L)``."""
    _check_gamma(params)
    g = params.exponent
    return params.c1 ** (1.0 - g) / ((g - 1.0) * params.kappa * params.lam * params.L_sigma)


def noncompensated_closed_form(params: ComparisonParams, t):
    """``F(t) = {(1-gamma) kappa lam L t + c1^(1-gamma)}^(1/(1-gamma))``; ``inf`` for ``t >= t*``."""
    _check_gamma(params)
    g = params.exponent
    t = np.asarray(t, dtype=float)
    base = (1.0 - g) * params.kappa * params.lam * params.L_sigma * t + params.c1 ** (1.0 - g)
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(base > 0, np.abs(base) ** (1.0 / (1.0 - g)), np.inf)
    return F if F.ndim else float(F)


def noncompensated_bound_ode(params: ComparisonParams, t_eval) -> BoundSolution:
    """RK4 solution of ``F' = kappa lam L F^gamma``, ``F(0) = c1``."""
    _check_gamma(params)
    g = params.exponent
    rate = params.kappa * params.lam * params.L_sigma
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    vals, tb = solve_refined(lambda t, y: rate * max(y, 0.0) ** g, 0.0, params.c1, t_eval,
                             rtol_start=1e-9)
    return BoundSolution(t_eval, vals, tb)


def weighted_seed(params: ComparisonParams) -> float:
    """``c0 (delta / (2 delta + eta))^(d/alpha)``."""
    p = params
    return p.c0 * (p.delta / (2 * p.delta + p.eta)) ** (p.d / p.alpha)


def weighted_bound_ode(params: ComparisonParams, t_eval, seed: float | None = None) -> BoundSolution:
    """Solve ``Y' = (lam L kappa / 2^(d/alpha)) Y^gamma t^(-d(gamma-1)/alpha)`` from ``delta``.

    Raises
    ------
    DomainError
        If ``delta = 0`` with a positive seed.
    """
    p = params
    g = p.exponent
    if g <= 1:
        raise OutOfRegimeError(f"exponent {g} must exceed 1")
    seed = weighted_seed(p) if seed is None else float(seed)
    if seed < 0:
        raise DomainError("seed must be nonnegative")
    if p.delta <= 0 and seed > 0:
        raise DomainError("a positive seed needs delta > 0")
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    if np.any(t_eval < p.delta):
        raise DomainError("evaluation times must not precede delta")
    crit = 1.0 + p.alpha / p.d
    if g == crit:
        note = "boundary case, theorem silent"
    elif g > crit:
        note = "exponent above 1 + alpha/d: outside the non-existence range, see regime_classify"
    else:
        note = ""
    if seed == 0:
        return BoundSolution(t_eval, np.zeros(t_eval.size), None, note)
    rate = p.lam * p.L_sigma * p.kappa / 2.0 ** (p.d / p.alpha)
    power = p.d * (g - 1.0) / p.alpha
    vals, tb = solve_refined(lambda t, y: rate * max(y, 0.0) ** g * t ** (-power), p.delta, seed, t_eval)
    return BoundSolution(t_eval, vals, tb, note)


# ---------------------------------------------------------------------------
# Regime classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegimeResult:
    regime: str
    citation: str


U0_TYPES = ("constant", "bump", "zero")
SIGMA_CLASSES = ("lipschitz", "superlinear")


def regime_classify(alpha: float, d: int, exponent: float, noise_type: str, u0_type: str,
                    sigma_class: str) -> RegimeResult:
    """Map parameters to the regime established by the non-existence and
    existence results.

    ``u0_type`` is ``constant`` (bounded below), ``bump`` (nonzero, positive
    on a set of positive measure) or ``zero``; ``sigma_class`` is
    ``lipschitz`` or ``superlinear``.  Boundary values of the open parameter
    sets are reported as ``boundary/indeterminate``.
    """
    if noise_type not in ("compensated", "noncompensated"):
        raise DomainError(f"unknown noise type {noise_type!r}")
    if u0_type not in U0_TYPES:
        raise DomainError(f"unknown initial data type {u0_type!r}")
    if sigma_class not in SIGMA_CLASSES:
        raise DomainError(f"unknown sigma class {sigma_class!r}")
    if not (0 < alpha <= 2) or d < 1:
        return RegimeResult("boundary/indeterminate", "parameters outside the stable range")
    dalang_finite = alpha > 1 and d == 1
    if noise_type == "compensated" and not dalang_finite:
        return RegimeResult("out-of-framework", "compensated noise needs a finite Dalang integral (alpha > 1, d = 1)")
    if sigma_class == "lipschitz":
        return RegimeResult("lipschitz-existence",
                            "globally Lipschitz sigma: unique random field solution")
    if noise_type == "compensated":
        if u0_type == "constant" and 1 < exponent < alpha:
            return RegimeResult("no-global-solution",
                                "compensated superlinear noise, initial data bounded below, 1 < beta < alpha, d = 1")
        return RegimeResult("boundary/indeterminate",
                            "compensated result needs 1 < beta < alpha and initial data bounded below")
    if u0_type == "constant" and exponent > 1:
        return RegimeResult("no-global-solution",
                            "non-compensated superlinear noise, initial data bounded below, gamma > 1")
    if u0_type == "bump" and 1 < exponent < 1 + alpha / d:
        return RegimeResult("no-global-solution",
                            "non-compensated superlinear noise, nonzero initial data, 1 < gamma < 1 + alpha/d")
    return RegimeResult("boundary/indeterminate",
                        "outside the open parameter sets of the non-existence results")


def regime_for(kernel: KernelSpec, exponent: float, noise_type: str, u0_type: str,
               sigma_class: str) -> RegimeResult:
    """Convenience wrapper using the Dalang integral of ``kernel`` directly."""
    if noise_type == "compensated" and math.isinf(dalang_upsilon(kernel, 1.0)):
        return RegimeResult("out-of-framework", "compensated noise needs a finite Dalang integral (alpha > 1, d = 1)")
    return regime_classify(kernel.alpha, kernel.d, exponent, noise_type, u0_type, sigma_class)
