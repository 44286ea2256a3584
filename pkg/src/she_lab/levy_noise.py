"""Poisson random measures with intensity ``dt dx nu(dh)``.

The jump measure ``nu`` is cut into shells of finite mass

    Gamma_0 = {|h| > 1},   Gamma_j = {eps_j < |h| < eps_{j-1}},  j >= 1,

with ``1 = eps_0 > eps_1 > ... > eps_J = eps_min``.  Jumps smaller than
``eps_min`` are dropped (no drift correction), so the truncation error is of
order ``int_{|h| < eps_min} h^2 nu(dh)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import integrate
from scipy.special import roots_legendre

from .errors import DomainError, InvalidArgumentError, UnsupportedError
from .rng import StreamFactory

_TABLE_POINTS = 4097


# ---------------------------------------------------------------------------
# Weights J, J_bar
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Weight:
    """Positive mark weight ``h -> scale * |h|^power`` (``power = 0`` gives a constant)."""

    power: float = 0.0
    scale: float = 1.0

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        if self.power == 0.0:
            out = np.full(h.shape, self.scale)
        else:
            out = self.scale * np.abs(h) ** self.power
        return out.item() if out.ndim == 0 else out

    @classmethod
    def parse(cls, text: str) -> "Weight":
        """``"one"``, ``"abs"``, ``"pow:q"``, optionally prefixed ``"c*"``."""
        text = text.strip()
        scale = 1.0
        if "*" in text:
            head, text = text.split("*", 1)
            scale = float(head)
        if text in ("one", "1", "const"):
            return cls(0.0, scale)
        if text == "abs":
            return cls(1.0, scale)
        if text.startswith("pow:"):
            return cls(float(text[4:]), scale)
        raise DomainError(f"unknown weight {text!r}")

    def describe(self) -> str:
        body = "one" if self.power == 0.0 else ("abs" if self.power == 1.0 else f"pow:{self.power:g}")
        return body if self.scale == 1.0 else f"{self.scale:g}*{body}"


@dataclass(frozen=True)
class WeightSpec:
    J: Weight
    J_bar: Weight
    K: float
    kappa: float


# ---------------------------------------------------------------------------
# Levy measure
# ---------------------------------------------------------------------------


def _default_boundaries(eps_min: float) -> tuple[float, ...]:
    b = [1.0]
    while b[-1] / 2.0 > eps_min * (1 + 1e-12):
        b.append(b[-1] / 2.0)
    if eps_min < 1.0:
        b.append(eps_min)
    return tuple(b)


@dataclass(frozen=True, eq=False)
class LevyMeasureSpec:
    """Jump measure ``nu(dh) = nu_density(h) dh`` on scalar marks.

    Parameters
    ----------
    nu_density : callable
        Density of ``nu`` with respect to Lebesgue measure, evaluated at
        positive marks (and at ``|h|`` for the negative half when
        ``symmetric``).
    h_lo, h_hi : float
        The density is charged on ``h_lo <= |h| <= h_hi``.  ``h_hi`` must be
        finite so marks can be sampled.
    eps_min : float
        Truncation level; only ``|h| >= eps_min`` is simulated.
    symmetric : bool
        Charge negative marks with the mirrored density as well.
    shell_boundaries : sequence of float, optional
        ``1 = eps_0 > eps_1 > ... >= eps_min``; dyadic by default.
    """

    nu_density: Callable[[np.ndarray], np.ndarray]
    h_lo: float
    h_hi: float
    eps_min: float = 1e-3
    symmetric: bool = False
    shell_boundaries: tuple[float, ...] | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0.0 <= self.h_lo < self.h_hi) or not math.isfinite(self.h_hi):
            raise DomainError("need 0 <= h_lo < h_hi < inf")
        if not self.eps_min > 0:
            raise DomainError("eps_min must be positive")
        b = self.shell_boundaries or _default_boundaries(self.eps_min)
        b = tuple(float(v) for v in b)
        if b[0] != 1.0 or any(b[i] <= b[i + 1] for i in range(len(b) - 1)):
            raise DomainError("shell boundaries must start at 1 and strictly decrease")
        if b[-1] < self.eps_min * (1 - 1e-12):
            raise DomainError("shell boundaries go below eps_min")
        object.__setattr__(self, "shell_boundaries", b)

    # shells -----------------------------------------------------------------

    @property
    def n_shells(self) -> int:
        """Number of shells including the outer shell ``Gamma_0``."""
        return len(self.shell_boundaries)

    def shell_range(self, j: int) -> tuple[float, float]:
        """Magnitude band of shell ``j`` intersected with the charged range."""
        if j == 0:
            lo, hi = 1.0, math.inf
        else:
            lo, hi = self.shell_boundaries[j], self.shell_boundaries[j - 1]
        lo = max(lo, self.h_lo, self.eps_min)
        hi = min(hi, self.h_hi)
        return lo, max(lo, hi)

    def shell_intervals(self, j: int) -> list[tuple[float, float, float]]:
        """Signed pieces ``(a, b, sign)`` of shell ``j`` with ``0 <= a < b``."""
        lo, hi = self.shell_range(j)
        if hi <= lo:
            return []
        pieces = [(lo, hi, 1.0)]
        if self.symmetric:
            pieces.append((lo, hi, -1.0))
        return pieces

    def _integrate(self, g: Callable, a: float, b: float) -> tuple[float, float]:
        f = lambda h: float(g(h)) * float(self.nu_density(h))
        if a > 0 and b / a > 10:
            # log substitution keeps power-law integrands well resolved
            val, err = integrate.quad(lambda u: f(math.exp(u)) * math.exp(u),
                                      math.log(a), math.log(b), limit=200,
                                      epsabs=1e-13, epsrel=1e-11)
        else:
            val, err = integrate.quad(f, a, b, limit=200, epsabs=1e-13, epsrel=1e-11)
        return val, err

    def integral(self, g: Callable[[float], float] = lambda h: 1.0,
                 shells: Sequence[int] | None = None) -> float:
        """``int g(h) nu(dh)`` over the simulated shells (``g`` sees signed marks)."""
        shells = range(self.n_shells) if shells is None else shells
        total = 0.0
        for j in shells:
            for a, b, sgn in self.shell_intervals(j):
                val, err = self._integrate(lambda h: g(sgn * h), a, b)
                if not math.isfinite(val) or (err > 1e-6 * max(1.0, abs(val))):
                    return math.inf
                total += val
        return total

    @cached_property
    def shell_masses(self) -> tuple[float, ...]:
        """``nu(Gamma_j)`` for ``j = 1..J``."""
        return tuple(self.integral(shells=[j]) for j in range(1, self.n_shells))

    @cached_property
    def outer_mass(self) -> float:
        return self.integral(shells=[0])

    def shell_mass(self, j: int) -> float:
        return self.outer_mass if j == 0 else self.shell_masses[j - 1]

    @property
    def total_mass(self) -> float:
        return self.outer_mass + sum(self.shell_masses)

    def levy_integrability(self) -> float:
        """``int (1 ^ h^2) nu(dh)`` over the charged range."""
        lo, hi = max(self.h_lo, 0.0), self.h_hi
        total = 0.0
        for a, b in ((lo, min(hi, 1.0)), (max(lo, 1.0), hi)):
            if b > a:
                total += self._integrate(lambda h: min(1.0, h * h), a, b)[0]
        return total * (2.0 if self.symmetric else 1.0)

    def truncation_error(self) -> float:
        """``int_{|h| < eps_min} h^2 nu(dh)``: second-moment mass that is dropped."""
        a, b = self.h_lo, min(self.eps_min, self.h_hi)
        if b <= a:
            return 0.0
        return self._integrate(lambda h: h * h, a, b)[0] * (2.0 if self.symmetric else 1.0)

    # mark sampling -------------------------------------------------------------

    @cached_property
    def _mark_tables(self) -> dict:
        tables = {}
        for j in range(self.n_shells):
            pieces = []
            for a, b, sgn in self.shell_intervals(j):
                if a > 0:
                    grid = np.geomspace(a, b, _TABLE_POINTS)
                else:
                    grid = np.linspace(a, b, _TABLE_POINTS)
                dens = np.asarray([self.nu_density(h) for h in grid], dtype=float)
                cum = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
                if cum[-1] <= 0:
                    continue
                pieces.append((grid, cum / cum[-1], sgn, cum[-1]))
            tables[j] = pieces
        return tables

    def sample_marks(self, j: int, rng: np.random.Generator, n: int) -> np.ndarray:
        pieces = self._mark_tables[j]
        if n == 0 or not pieces:
            return np.empty(0)
        w = np.array([p[3] for p in pieces])
        which = rng.choice(len(pieces), size=n, p=w / w.sum()) if len(pieces) > 1 else np.zeros(n, int)
        u = rng.random(n)
        out = np.empty(n)
        for k, (grid, cdf, sgn, _) in enumerate(pieces):
            sel = which == k
            out[sel] = sgn * np.interp(u[sel], cdf, grid)
        return out

    def describe(self) -> dict:
        return {"name": self.name, "h_lo": self.h_lo, "h_hi": self.h_hi,
                "eps_min": self.eps_min, "symmetric": self.symmetric, **self.params}


def uniform_measure(lo: float = 1.0, hi: float = 2.0, mass: float = 1.0,
                    eps_min: float = 1e-3, symmetric: bool = False) -> LevyMeasureSpec:
    """Finite measure with constant density on ``[lo, hi]`` and total mass ``mass``."""
    c = mass / (hi - lo) / (2.0 if symmetric else 1.0)
    return LevyMeasureSpec(lambda h: c, lo, hi, eps_min=min(eps_min, lo) if lo > 0 else eps_min,
                           symmetric=symmetric, name="uniform",
                           params={"lo": lo, "hi": hi, "mass": mass})


def power_law_measure(exponent: float = 1.5, eps_min: float = 1e-3, h_max: float = 1.0,
                      scale: float = 1.0, symmetric: bool = False,
                      shell_boundaries: tuple[float, ...] | None = None) -> LevyMeasureSpec:
    """``nu(dh) = scale |h|^{-exponent} dh`` on ``eps_min <= |h| <= h_max``."""
    return LevyMeasureSpec(lambda h: scale * abs(h) ** (-exponent), eps_min, h_max,
                           eps_min=eps_min, symmetric=symmetric,
                           shell_boundaries=shell_boundaries, name="powerlaw",
                           params={"exponent": exponent, "h_max": h_max, "scale": scale})


NU_PRESETS = {
    "uniform": uniform_measure,
    "powerlaw": power_law_measure,
}


def nu_preset(name: str, **kwargs) -> LevyMeasureSpec:
    try:
        return NU_PRESETS[name](**kwargs)
    except KeyError:
        raise DomainError(f"unknown nu preset {name!r}; choose from {sorted(NU_PRESETS)}") from None


# ---------------------------------------------------------------------------
# Point samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointSample:
    time: float
    position: float | np.ndarray
    mark: float


@dataclass(frozen=True, eq=False)
class PointSet:
    """Atoms ``(T_i, X_i, Z_i)`` of a Poisson random measure, column-stored."""

    times: np.ndarray
    positions: np.ndarray
    marks: np.ndarray
    shells: np.ndarray

    def __len__(self) -> int:
        return int(self.times.size)

    def __iter__(self) -> Iterator[PointSample]:
        for k in range(len(self)):
            yield PointSample(float(self.times[k]), self.positions[k], float(self.marks[k]))

    @classmethod
    def empty(cls, dim: int = 1) -> "PointSet":
        pos = np.empty(0) if dim == 1 else np.empty((0, dim))
        return cls(np.empty(0), pos, np.empty(0), np.empty(0, dtype=int))

    @classmethod
    def concat(cls, sets: Sequence["PointSet"]) -> "PointSet":
        sets = list(sets)
        if not sets:
            return cls.empty()
        return cls(np.concatenate([s.times for s in sets]),
                   np.concatenate([s.positions for s in sets]),
                   np.concatenate([s.marks for s in sets]),
                   np.concatenate([s.shells for s in sets]))


def _normalize_box(box) -> np.ndarray:
    arr = np.asarray(box, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[-1] != 2 or np.any(arr[:, 1] <= arr[:, 0]):
        raise DomainError("box must be a sequence of (lo, hi) with hi > lo")
    return arr


def box_volume(box) -> float:
    arr = _normalize_box(box)
    return float(np.prod(arr[:, 1] - arr[:, 0]))


def sample_points(spec: LevyMeasureSpec, window: tuple[float, float], box,
                  shells: Sequence[int] | None = None,
                  rng_stream: StreamFactory | np.random.Generator | None = None,
                  key: tuple[int, ...] = ()) -> PointSet:
    """Draw the atoms of ``N`` in ``window x box x (union of shells)``.

    Each shell gets its own stream ``rng_stream.generator(*key, j)`` so that
    adding shells (lowering ``eps_min``) leaves the existing ones untouched.
    """
    t_a, t_b = map(float, window)
    if t_a < 0 or t_b < t_a:
        raise DomainError("window must satisfy 0 <= t_a <= t_b")
    arr = _normalize_box(box)
    dim = arr.shape[0]
    shells = range(spec.n_shells) if shells is None else list(shells)
    if t_b == t_a or len(shells) == 0:
        return PointSet.empty(dim)
    if rng_stream is None:
        rng_stream = StreamFactory(0)
    vol = float(np.prod(arr[:, 1] - arr[:, 0]))
    parts = []
    for j in shells:
        mass = spec.shell_mass(j)
        if not math.isfinite(mass):
            raise UnsupportedError(f"shell {j} has infinite mass")
        if mass == 0.0:
            continue
        rng = rng_stream.generator(*key, j) if isinstance(rng_stream, StreamFactory) else rng_stream
        n = int(rng.poisson((t_b - t_a) * vol * mass))
        times = t_a + (t_b - t_a) * rng.random(n)
        pos = arr[:, 0] + (arr[:, 1] - arr[:, 0]) * rng.random((n, dim))
        if dim == 1:
            pos = pos[:, 0]
        marks = spec.sample_marks(j, rng, n)
        parts.append(PointSet(times, pos, marks, np.full(n, j, dtype=int)))
    return PointSet.concat(parts)


# ---------------------------------------------------------------------------
# Integrals
# ---------------------------------------------------------------------------


def integrate_noncompensated(f: Callable, points: PointSet) -> float:
    """``sum_k f(T_k, X_k, Z_k)``; ``f`` is called once on the column arrays."""
    if len(points) == 0:
        return 0.0
    vals = np.broadcast_to(np.asarray(f(points.times, points.positions, points.marks), float),
                           points.times.shape)
    return float(np.sum(vals))


def integrate_compensated(f: Callable, points: PointSet, compensator_quadrature: float | None) -> float:
    """Non-compensated sum minus the precomputed ``int int int f ds dx nu(dh)``."""
    if compensator_quadrature is None:
        raise InvalidArgumentError("compensated integral needs the compensator value")
    return integrate_noncompensated(f, points) - float(compensator_quadrature)


def compensator_quadrature(f: Callable, spec: LevyMeasureSpec, window, box,
                           shells: Sequence[int] | None = None, nodes: int = 24) -> float:
    """Tensor Gauss-Legendre value of ``int_window int_box int_shells f ds dx nu(dh)``.

    Marks are integrated in ``log |h|`` per shell piece.  One-dimensional
    boxes only.
    """
    arr = _normalize_box(box)
    if arr.shape[0] != 1:
        raise UnsupportedError("compensator quadrature is implemented for 1-D boxes")
    t_a, t_b = map(float, window)
    if t_b <= t_a:
        return 0.0
    z, w = roots_legendre(nodes)
    s = t_a + (t_b - t_a) * (z + 1) / 2
    ws = w * (t_b - t_a) / 2
    a, b = arr[0]
    x = a + (b - a) * (z + 1) / 2
    wx = w * (b - a) / 2
    shells = range(spec.n_shells) if shells is None else shells
    total = 0.0
    zm, wm = roots_legendre(2 * nodes)
    for j in shells:
        for lo, hi, sgn in spec.shell_intervals(j):
            if lo > 0:
                u = math.log(lo) + (math.log(hi) - math.log(lo)) * (zm + 1) / 2
                h = np.exp(u)
                wh = wm * (math.log(hi) - math.log(lo)) / 2 * h
            else:
                h = lo + (hi - lo) * (zm + 1) / 2
                wh = wm * (hi - lo) / 2
            wh = wh * np.array([spec.nu_density(v) for v in h])
            S, X, H = np.meshgrid(s, x, sgn * h, indexing="ij")
            W = ws[:, None, None] * wx[None, :, None] * wh[None, None, :]
            total += float(np.sum(W * np.broadcast_to(f(S, X, H), S.shape)))
    return total


# ---------------------------------------------------------------------------
# Weight integrability report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightReport:
    int_J: float
    int_J2: float
    int_Jbar: float
    int_Jbar2: float
    K: float
    kappa: float
    checks: dict
    diagnostics: tuple[str, ...] = ()

    def passes(self, regime: str) -> bool:
        return all(self.checks[regime].values())

    def as_dict(self) -> dict:
        return {
            "int_J": self.int_J, "int_J2": self.int_J2,
            "int_Jbar": self.int_Jbar, "int_Jbar2": self.int_Jbar2,
            "K": self.K, "kappa": self.kappa, "checks": self.checks,
            "diagnostics": list(self.diagnostics),
        }


def weight_integrals(spec: LevyMeasureSpec, w: WeightSpec, rtol: float = 1e-9) -> WeightReport:
    """Integrate ``J, J^2, J_bar, J_bar^2`` against ``nu`` on the simulated
    shells and test the integrability sandwiches for both noise types.

    ``rtol`` absorbs quadrature round-off when constants are set to the exact
    integrals.
    """
    vals = {
        "int_J": spec.integral(lambda h: w.J(h)),
        "int_J2": spec.integral(lambda h: w.J(h) ** 2),
        "int_Jbar": spec.integral(lambda h: w.J_bar(h)),
        "int_Jbar2": spec.integral(lambda h: w.J_bar(h) ** 2),
    }
    diags = [f"{k} diverges on the truncated mark range" for k, v in vals.items() if not math.isfinite(v)]
    K, kappa = w.K, w.kappa
    le = lambda a, b: math.isfinite(a) and a <= b * (1 + rtol)
    checks = {
        "compensated": {
            "int_J2<=K": le(vals["int_J2"], K),
            "kappa<=int_Jbar2": le(kappa, vals["int_Jbar2"]),
            "int_Jbar2<=K": le(vals["int_Jbar2"], K),
        },
        "noncompensated": {
            "int_J<=K": le(vals["int_J"], K),
            "kappa<=int_Jbar": le(kappa, vals["int_Jbar"]),
            "int_Jbar<=K": le(vals["int_Jbar"], K),
        },
    }
    if not (K > 0 and kappa > 0 and math.isfinite(K) and math.isfinite(kappa)):
        diags.append("K and kappa must be finite and positive")
        checks = {r: {k: False for k in c} for r, c in checks.items()}
    return WeightReport(K=K, kappa=kappa, checks=checks, diagnostics=tuple(diags), **vals)
