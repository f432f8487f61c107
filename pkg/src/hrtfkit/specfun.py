"""First-order Bessel J1 and Struve H1 for non-negative real arguments.

Both use their power series on the small-argument side and an asymptotic
expansion beyond a crossover chosen so that cancellation in the series and the
smallest asymptotic term both stay well under the target error.
"""
from __future__ import annotations

import math

import numpy as np

J1_SERIES_MAX = 12.0
H1_SERIES_MAX = 20.0


def _j1_series(x: float) -> float:
    half = 0.5 * x
    term = half
    total = term
    k = 0
    while abs(term) > 1e-17 * max(abs(total), 1e-300) and k < 200:
        k += 1
        term *= -half * half / (k * (k + 1))
        total += term
    return total


def _hankel_pq(x: float, nu: int) -> tuple[float, float]:
    """Hankel P, Q series, truncated at their smallest term."""
    mu = 4.0 * nu * nu
    p, q = 1.0, 0.0
    term = 1.0
    prev = math.inf
    k = 0
    while True:
        k += 1
        term *= (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(term) >= prev or abs(term) < 1e-18:
            break
        prev = abs(term)
        # terms alternate between Q (odd k) and P (even k) with sign (-1)^floor(k/2)
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2:
            q += sign * term
        else:
            p += sign * term
    return p, q


def _j1_asymptotic(x: float) -> float:
    p, q = _hankel_pq(x, 1)
    chi = x - 0.75 * math.pi
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


def _y1_asymptotic(x: float) -> float:
    p, q = _hankel_pq(x, 1)
    chi = x - 0.75 * math.pi
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.sin(chi) + q * math.cos(chi))


def _j1_scalar(x: float) -> float:
    if x < 0:
        raise ValueError("bessel_j1 is defined here for x >= 0 only")
    if x < J1_SERIES_MAX:
        return _j1_series(x)
    return _j1_asymptotic(x)


def _h1_series(x: float) -> float:
    half = 0.5 * x
    term = half * half / (math.gamma(1.5) * math.gamma(2.5))
    total = term
    k = 0
    while abs(term) > 1e-17 * max(abs(total), 1e-300) and k < 300:
        k += 1
        term *= -half * half / ((k + 0.5) * (k + 1.5))
        total += term
    return total


def _h1_asymptotic(x: float) -> float:
    # H1 - Y1 ~ (1/pi) sum_k Gamma(k+1/2)/Gamma(3/2-k) (x/2)^(-2k)
    term = 2.0
    total = term
    prev = math.inf
    z = (2.0 / x) ** 2
    k = 0
    while True:
        term *= (k + 0.5) * (0.5 - k) * z
        k += 1
        if abs(term) >= prev or abs(term) < 1e-18:
            break
        prev = abs(term)
        total += term
    return _y1_asymptotic(x) + total / math.pi


def _h1_scalar(x: float) -> float:
    if x < 0:
        raise ValueError("struve_h1 is defined here for x >= 0 only")
    if x < H1_SERIES_MAX:
        return _h1_series(x)
    return _h1_asymptotic(x)


def _vectorized(fn, x):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return fn(float(arr))
    return np.array([fn(float(v)) for v in arr.ravel()]).reshape(arr.shape)


def bessel_j1(x):
    """Bessel function of the first kind, order one (absolute error < 1e-8)."""
    return _vectorized(_j1_scalar, x)


def struve_h1(x):
    """Struve function of order one (absolute error < 1e-6)."""
    return _vectorized(_h1_scalar, x)
