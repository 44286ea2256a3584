"""Reference solutions built without the package's own numerics."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special, stats


def gaussian_density(t, x):
    """Kernel of ``exp(t * Laplacian)`` in one dimension."""
    return np.exp(-np.asarray(x) ** 2 / (4 * t)) / np.sqrt(4 * np.pi * t)


def cauchy_density(t, x):
    return t / (np.pi * (t**2 + np.asarray(x) ** 2))


def stable_density(alpha, t, x):
    """scipy's symmetric stable law rescaled to ``exp(-t |xi|^alpha)``."""
    return stats.levy_stable.pdf(np.asarray(x) / t ** (1 / alpha), alpha, 0.0) / t ** (1 / alpha)


def stable_origin(alpha):
    """``p(1, 0) = Gamma(1 + 1/alpha) / pi``."""
    return math.gamma(1 + 1 / alpha) / math.pi


def upsilon_closed(alpha, beta=1.0):
    """``(1/pi) int_0^inf dxi / (beta + 2 xi^alpha)`` via the Beta-function identity."""
    a = alpha
    c = 2.0 / beta
    return (1 / math.pi) / beta * c ** (-1 / a) * (math.pi / a) / math.sin(math.pi / a)


def upsilon_quad(alpha, beta=1.0):
    val, _ = integrate.quad(lambda s: 1.0 / (beta + 2 * s**alpha), 0, np.inf, epsabs=1e-13, epsrel=1e-12)
    return val / math.pi


def indicator_heat(t, x, a=1.0):
    """``(P_t 1_[-a,a])(x)`` for the Gaussian kernel."""
    s = 2 * math.sqrt(t)
    return 0.5 * (special.erf((x + a) / s) - special.erf((x - a) / s))


def exponential_renewal(c, rate, t):
    """Solution of ``m(t) = c + rate int_0^t m``."""
    return c * np.exp(rate * np.asarray(t))


def volterra_sqrt(c, a, T, n=2000):
    """Product-trapezoid solution of ``v(t) = c + a int_0^t (t-s)^(-1/2) v(s) ds``.

    The integrand is taken piecewise linear in ``s`` and integrated exactly
    against the weak singularity.
    """
    h = T / n
    t = np.arange(n + 1) * h
    v = np.empty(n + 1)
    v[0] = c
    for k in range(1, n + 1):
        j = np.arange(k)
        A = t[k] - t[j]
        B = t[k] - t[j + 1]
        i0 = 2 * (np.sqrt(A) - np.sqrt(B))
        i1 = (2 / 3) * (A**1.5 - B**1.5)
        w_left = (i1 - B * i0) / h
        w_right = (A * i0 - i1) / h
        s = np.dot(w_left, v[j]) + np.dot(w_right[:-1], v[j[1:]])
        v[k] = (c + a * s) / (1 - a * w_right[-1])
    return t, v


def compensated_tb_example():
    """Blow-up of ``Y' = Y^1.5 t^-0.75`` from ``Y(1) = 1``: ``1 = 2 (t^(1/4) - 1)``."""
    return 1.5**4


def weighted_tb_example():
    """Blow-up of ``Y' = Y^2 t^-0.5 / sqrt(2)`` from ``Y(1) = 1``."""
    return (1 + 1 / math.sqrt(2)) ** 2
