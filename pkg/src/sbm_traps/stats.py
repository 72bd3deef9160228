"""Regression, confidence-interval, and distribution-test helpers."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import stats as _sps


@dataclass(frozen=True)
class RateRegression:
    """Least-squares fit of log(value) against log(eps)."""

    points: Tuple[Tuple[float, float], ...]
    slope: float
    intercept: float
    r_squared: float

    def __post_init__(self):
        if len(self.points) < 3:
            raise ValueError("rate regression needs at least 3 points")
        if not np.isfinite(self.slope):
            raise ValueError("slope must be finite")


def rate_regression(eps_values: Sequence[float], values: Sequence[float]) -> RateRegression:
    eps_values = np.asarray(eps_values, dtype=float)
    values = np.asarray(values, dtype=float)
    if eps_values.size != values.size or eps_values.size < 3:
        raise ValueError("need >= 3 (eps, value) pairs")
    if np.any(values <= 0) or np.any(eps_values <= 0):
        raise ValueError("rate regression needs positive values")
    x = np.log(eps_values)
    y = np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(((y - fitted) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateRegression(points=tuple(zip(x.tolist(), y.tolist())),
                          slope=float(slope), intercept=float(intercept), r_squared=r2)


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov p-value."""
    return float(_sps.ks_2samp(np.asarray(a), np.asarray(b)).pvalue)


def binomial_se(p_hat: float, n: int) -> float:
    return math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n)


def variance_se(values: Sequence[float]) -> float:
    """Standard error of a sample variance via the fourth central moment."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 4:
        return math.inf
    centered = v - v.mean()
    m2 = float((centered**2).mean())
    m4 = float((centered**4).mean())
    return math.sqrt(max(m4 - m2**2, 0.0) / n)
