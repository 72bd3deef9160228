"""Bounded nonnegative obstacle-intensity fields c(x).

Three concrete kinds: constant, radial profile around a center, and boxed
piecewise-constant.  Every field knows a finite supremum bound, which the
Poisson thinning sampler and the killed-motion rates rely on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Tuple

import numpy as np

from .geometry import Box


class IntensityField:
    """Interface: vectorized evaluation plus a finite sup-norm bound."""

    kind: str = "abstract"
    bound: float = 0.0

    def __call__(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self, values: np.ndarray) -> np.ndarray:
        # Contract 0 <= c(x) <= bound; cheap to verify on every batch.
        if values.size and (values.min() < -1e-12 or values.max() > self.bound + 1e-9):
            raise ValueError(f"{self.kind} intensity left [0, bound={self.bound}]")
        return np.clip(values, 0.0, self.bound)


@dataclass(frozen=True)
class ConstantIntensity(IntensityField):
    value: float = 1.0
    kind: str = "constant"

    def __post_init__(self):
        if self.value < 0 or not np.isfinite(self.value):
            raise ValueError("constant intensity must be finite and >= 0")

    @property
    def bound(self) -> float:
        return self.value

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.full(len(pts), self.value)


@dataclass(frozen=True)
class RadialIntensity(IntensityField):
    """c(x) = profile(|x - center|), profile given as a vectorized callable."""

    center: np.ndarray
    profile: Callable[[np.ndarray], np.ndarray]
    sup: float
    kind: str = "radial"

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not np.isfinite(self.sup) or self.sup < 0:
            raise ValueError("radial intensity needs a finite nonnegative bound")

    @property
    def bound(self) -> float:
        return self.sup

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.sqrt(((pts - self.center) ** 2).sum(axis=1))
        return self._check(np.asarray(self.profile(r), dtype=float))


def gaussian_bump(center, amplitude: float, width: float) -> RadialIntensity:
    """Smooth bump amplitude * exp(-r^2 / (2 width^2))."""
    if amplitude < 0 or width <= 0:
        raise ValueError("bump needs amplitude >= 0 and width > 0")
    return RadialIntensity(
        center=np.asarray(center, dtype=float),
        profile=lambda r: amplitude * np.exp(-(r**2) / (2.0 * width**2)),
        sup=amplitude,
    )


@dataclass(frozen=True)
class BoxedIntensity(IntensityField):
    """Piecewise constant: background outside, per-box values inside.

    Later boxes win on overlap.
    """

    pieces: Tuple[Tuple[Box, float], ...]
    background: float = 0.0
    kind: str = "boxed"

    def __post_init__(self):
        vals = [self.background] + [v for _, v in self.pieces]
        if any(v < 0 or not np.isfinite(v) for v in vals):
            raise ValueError("boxed intensity values must be finite and >= 0")

    @property
    def bound(self) -> float:
        return max([self.background] + [v for _, v in self.pieces])

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(pts), self.background)
        for box, value in self.pieces:
            out[box.contains(pts)] = value
        return out


def half_space_indicator(dim: int, axis: int = 0, positive: bool = True, value: float = 1.0,
                         extent: float = 1e6) -> BoxedIntensity:
    """Indicator of a half space, realized as one very large box."""
    lo = np.full(dim, -extent)
    hi = np.full(dim, extent)
    if positive:
        lo[axis] = 0.0
    else:
        hi[axis] = 0.0
    return BoxedIntensity(pieces=((Box(lo, hi), value),), background=0.0)
