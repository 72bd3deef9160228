"""Bounded nonnegative test functions and Laplace-functional probes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np


class TestFunction:
    """Bounded nonnegative f with a known sup norm.

    grid_safe marks functions smooth enough to sample onto a solver grid
    (discontinuous indicators are rejected there); is_constant enables
    mass-only particle runs.
    """

    sup: float = 0.0
    grid_safe: bool = True
    is_constant: bool = False

    def __call__(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def laplacian(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no Laplacian")


@dataclass(frozen=True)
class Constant(TestFunction):
    value: float = 1.0
    is_constant: bool = True
    grid_safe: bool = True

    def __post_init__(self):
        if self.value < 0 or not np.isfinite(self.value):
            raise ValueError("constant test function must be finite and >= 0")

    @property
    def sup(self) -> float:
        return self.value

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.full(len(pts), self.value)

    def laplacian(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.zeros(len(pts))


@dataclass(frozen=True)
class GaussianBump(TestFunction):
    """amplitude * exp(-|x - center|^2 / (2 width^2)); smooth, compactly negligible."""

    center: np.ndarray = None
    amplitude: float = 1.0
    width: float = 0.5
    grid_safe: bool = True
    is_constant: bool = False

    def __post_init__(self):
        if self.amplitude < 0 or self.width <= 0:
            raise ValueError("need amplitude >= 0 and width > 0")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    @property
    def sup(self) -> float:
        return self.amplitude

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r2 = ((pts - self.center) ** 2).sum(axis=1)
        return self.amplitude * np.exp(-r2 / (2.0 * self.width**2))

    def laplacian(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.center.size
        w2 = self.width**2
        r2 = ((pts - self.center) ** 2).sum(axis=1)
        return self(pts) * (r2 / w2**2 - d / w2)


@dataclass(frozen=True)
class BallIndicator(TestFunction):
    """value * 1{|x - center| <= radius}; bounded but discontinuous."""

    center: np.ndarray = None
    radius: float = 1.0
    value: float = 1.0
    grid_safe: bool = False
    is_constant: bool = False

    def __post_init__(self):
        if self.radius <= 0 or self.value < 0:
            raise ValueError("need radius > 0 and value >= 0")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    @property
    def sup(self) -> float:
        return self.value

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r2 = ((pts - self.center) ** 2).sum(axis=1)
        return np.where(r2 <= self.radius**2, self.value, 0.0)


@dataclass(frozen=True)
class LaplaceProbe:
    """Times t_1 < ... < t_p with bounded nonnegative test functions f_i."""

    times: Tuple[float, ...]
    fns: Tuple[TestFunction, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        fns = tuple(self.fns)
        if len(times) < 1 or len(times) != len(fns):
            raise ValueError("probe needs p >= 1 times with matching functions")
        if any(t < 0 for t in times):
            raise ValueError("probe times must be >= 0")
        if any(t1 >= t2 for t1, t2 in zip(times, times[1:])):
            raise ValueError("probe times must be strictly increasing")
        if any(not np.isfinite(f.sup) for f in fns):
            raise ValueError("test functions must have finite sup norm")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "fns", fns)

    @property
    def horizon(self) -> float:
        return self.times[-1]

    @property
    def c_f(self) -> float:
        """Sum of sup norms; a.s. bound for the log-Laplace solution."""
        return float(sum(f.sup for f in self.fns))
