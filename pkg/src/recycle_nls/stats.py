"""Small statistical kernel: quantiles, ECDF distances, the normal law."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import EmptySample

__all__ = [
    "SummaryStats",
    "summarize",
    "quantile",
    "ecdf",
    "ks_two_sample",
    "ks_vs_normal",
    "normal_cdf",
    "normal_quantile",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    sd: float
    min: float
    max: float


def _nonempty(a) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise EmptySample("sample is empty")
    return a


def summarize(sample) -> SummaryStats:
    """Count, mean, SD (divisor n - 1; 0 for a single value), min and max.

    The sample is sorted first so the result does not depend on input order.
    """
    a = np.sort(_nonempty(sample))
    mean = float(np.mean(a))
    sd = float(np.std(a, ddof=1)) if a.size > 1 else 0.0
    # guard the ordering invariant against last-ulp rounding in the mean
    mean = min(max(mean, float(a[0])), float(a[-1]))
    return SummaryStats(int(a.size), mean, sd, float(a[0]), float(a[-1]))


def quantile(sorted_sample, q: float) -> float:
    """Type-7 quantile of an ascending sample (linear interpolation between order statistics)."""
    a = _nonempty(sorted_sample)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level {q} outside [0, 1]")
    h = (a.size - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, a.size - 1)
    return float(a[lo] + (h - lo) * (a[hi] - a[lo]))


def ecdf(sample, t):
    """Right-continuous empirical CDF of ``sample`` evaluated at ``t``."""
    a = np.sort(_nonempty(sample))
    out = np.searchsorted(a, t, side="right") / a.size
    return float(out) if np.ndim(out) == 0 else out


def ks_two_sample(a, b) -> float:
    """sup_u |F_a(u) - F_b(u)|, evaluated exactly at every pooled jump point."""
    a = np.sort(_nonempty(a))
    b = np.sort(_nonempty(b))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def normal_cdf(z):
    """Standard normal CDF, 0.5 erfc(-z / sqrt 2)."""
    out = 0.5 * erfc(-np.asarray(z, dtype=float) / _SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def ks_vs_normal(a, mu: float = 0.0, sigma: float = 1.0) -> float:
    """One-sample KS distance between the ECDF of ``a`` and N(mu, sigma^2)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    a = np.sort(_nonempty(a))
    n = a.size
    F = normal_cdf((a - mu) / sigma)
    i = np.arange(1, n + 1)
    return float(np.max(np.maximum(np.abs(i / n - F), np.abs(F - (i - 1) / n))))


# Acklam's rational approximation, relative error ~1.15e-9 before refinement
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(q: float) -> float:
    if q < _P_LOW:
        r = math.sqrt(-2.0 * math.log(q))
        return (((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / (
            (((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0)
    if q > 1.0 - _P_LOW:
        return -_acklam(1.0 - q)
    r = q - 0.5
    s = r * r
    return (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * r / (
        ((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0)


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF: Acklam's approximation plus one Halley step."""
    q = float(q)
    if not 0.0 < q < 1.0:
        raise ValueError(f"normal quantile needs 0 < q < 1, got {q}")
    z = _acklam(q)
    # refine on the smaller tail for accuracy near 1
    if q > 0.5:
        e = 0.5 * math.erfc(z / _SQRT2) - (1.0 - q)
        e = -e
    else:
        e = 0.5 * math.erfc(-z / _SQRT2) - q
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * z * z)
    return z - u / (1.0 + 0.5 * z * u)
