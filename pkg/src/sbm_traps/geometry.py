"""Axis-aligned boxes and killing domains."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box [lo, hi] in R^d."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box corners must be 1-d arrays of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box corners must be finite")
        if np.any(hi < lo):
            raise ValueError("box has hi < lo on some axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def contains_box(self, other: "Box") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def inflate(self, margin: float) -> "Box":
        return Box(self.lo - margin, self.hi + margin)

    def intersect(self, other: "Box") -> Optional["Box"]:
        """Intersection box, or None when the interiors are disjoint."""
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(hi <= lo):
            return None
        return Box(lo, hi)

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return gen.uniform(self.lo, self.hi, size=(n, self.dim))

    @staticmethod
    def bounding(points: np.ndarray) -> "Box":
        pts = np.atleast_2d(np.asarray(points))
        return Box(pts.min(axis=0).astype(float), pts.max(axis=0).astype(float))

    @staticmethod
    def cube(center, half_width: float) -> "Box":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return Box(c - half_width, c + half_width)


@dataclass(frozen=True)
class Domain:
    """Open set the spatial motion lives in: full space, open ball or open box.

    Obstacles are closed, domains are open: a point exactly on the domain
    boundary counts as outside.
    """

    kind: str  # "full" | "ball" | "box"
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    box: Optional[Box] = None

    def __post_init__(self):
        if self.kind not in ("full", "ball", "box"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "ball":
            if self.center is None or self.radius is None or self.radius <= 0:
                raise ValueError("ball domain needs a center and a positive radius")
            object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.kind == "box" and self.box is None:
            raise ValueError("box domain needs a Box")

    @staticmethod
    def full() -> "Domain":
        return Domain(kind="full")

    @staticmethod
    def ball(center, radius: float) -> "Domain":
        return Domain(kind="ball", center=np.asarray(center, dtype=float), radius=float(radius))

    @staticmethod
    def open_box(box: Box) -> "Domain":
        return Domain(kind="box", box=box)

    @property
    def is_full(self) -> bool:
        return self.kind == "full"

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Strict membership in the open set."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "full":
            return np.ones(len(pts), dtype=bool)
        if self.kind == "ball":
            d2 = ((pts - self.center) ** 2).sum(axis=1)
            return d2 < self.radius**2
        return np.all((pts > self.box.lo) & (pts < self.box.hi), axis=1)

    def bounding_box(self) -> Optional[Box]:
        if self.kind == "full":
            return None
        if self.kind == "ball":
            return Box(self.center - self.radius, self.center + self.radius)
        return self.box
