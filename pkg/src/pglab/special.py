"""Regularized incomplete beta function and one-sample Kolmogorov-Smirnov test."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import kstwobign

_TINY = 1e-300
_EPS = 1e-15


def _betacf(a: float, b: float, x: np.ndarray, max_iter: int = 500) -> np.ndarray:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < _EPS
        if done.all():
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge for a={a}, b={b}")


def betainc(a: float, b: float, x) -> np.ndarray:
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0`` and ``x`` in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("betainc needs 0 <= x <= 1")
    out = np.empty_like(x)
    flat_x, flat_out = x.reshape(-1), out.reshape(-1)
    flat_out[flat_x == 0] = 0.0
    flat_out[flat_x == 1] = 1.0
    inner = (flat_x > 0) & (flat_x < 1)
    xi = flat_x[inner]
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * np.log(xi) + b * np.log1p(-xi))
    front = np.exp(log_front)
    # the fraction converges fast for x below the mean; use the symmetry otherwise
    direct = xi < (a + 1.0) / (a + b + 2.0)
    res = np.empty_like(xi)
    if direct.any():
        res[direct] = front[direct] * _betacf(a, b, xi[direct]) / a
    if (~direct).any():
        res[~direct] = 1.0 - front[~direct] * _betacf(b, a, 1.0 - xi[~direct]) / b
    flat_out[inner] = res
    return out if out.ndim else float(out)


def ks_statistic(samples, cdf) -> float:
    """Kolmogorov-Smirnov distance between the empirical law of ``samples`` and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    F = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_test(samples, cdf) -> tuple[float, float]:
    """One-sample KS statistic with its asymptotic (Kolmogorov) p-value."""
    n = np.size(samples)
    D = ks_statistic(samples, cdf)
    return D, float(kstwobign.sf(math.sqrt(n) * D))


def beta_cdf(a: float, b: float):
    return lambda x: betainc(a, b, np.clip(x, 0.0, 1.0))
