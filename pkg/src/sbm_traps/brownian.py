"""Discretized Brownian paths, bridge refinement, and Gaussian kernels."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as _gamma

from .geometry import Box
from .rng import RandomSource

_GEN_CHUNK = 2_000_000  # increments generated per chunk, bounds peak memory


@dataclass(frozen=True)
class BrownianPath:
    """Euler-discretized d-dimensional Brownian trajectory.

    positions[i] is the location at time t0 + i*step; positions[0] is the
    start point.  Positions may be stored in float32 (large paths); the
    accumulation that produced them is always done in float64.
    """

    dim: int
    t0: float
    step: float
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions)
        if pos.ndim != 2 or pos.shape[1] != self.dim or pos.shape[0] < 1:
            raise ValueError("positions must be a (n_points, dim) array with n_points >= 1")
        if self.step <= 0 or not np.isfinite(self.step):
            raise ValueError("step must be a positive finite number")
        object.__setattr__(self, "positions", pos)

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def t_end(self) -> float:
        return self.t0 + self.n_steps * self.step

    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(self.positions.shape[0])

    def time_of(self, index: int) -> float:
        return self.t0 + self.step * index

    def bounding_box(self) -> Box:
        return Box(self.positions.min(axis=0).astype(float),
                   self.positions.max(axis=0).astype(float))


def sample_brownian_path(rng: RandomSource, x, t0: float, t1: float, step: float,
                         dim: int, dtype=np.float64) -> BrownianPath:
    """Brownian path from x over [t0, t1] with i.i.d. N(0, step * I) increments.

    The number of increments is ceil((t1 - t0)/step); the final time may
    overshoot t1 by less than one step.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if x.size != dim:
        raise ValueError(f"start point has dimension {x.size}, expected {dim}")
    if not (np.isfinite(x).all() and np.isfinite([t0, t1, step]).all()):
        raise ValueError("non-finite input")
    if step <= 0:
        raise ValueError("step must be > 0")
    if t1 <= t0:
        raise ValueError("need t1 > t0")

    n = int(math.ceil((t1 - t0) / step - 1e-12))
    gen = rng.generator()
    out = np.empty((n + 1, dim), dtype=dtype)
    out[0] = x
    carry = x.copy()
    scale = math.sqrt(step)
    done = 0
    while done < n:
        m = min(_GEN_CHUNK, n - done)
        inc = gen.standard_normal((m, dim)) * scale
        np.cumsum(inc, axis=0, out=inc)
        inc += carry
        out[done + 1: done + 1 + m] = inc
        carry = inc[-1].copy()
        done += m
    return BrownianPath(dim=dim, t0=float(t0), step=float(step), positions=out)


def bridge_fill(gen: np.random.Generator, x0: np.ndarray, x1: np.ndarray,
                dt: float, n_sub: int) -> np.ndarray:
    """Exact Brownian bridge between x0 and x1 at n_sub uniform substeps.

    Returns (n_sub + 1, d) positions including both endpoints.
    """
    d = x0.size
    fine = dt / n_sub
    inc = gen.standard_normal((n_sub, d)) * math.sqrt(fine)
    walk = np.vstack([np.zeros(d), np.cumsum(inc, axis=0)])
    frac = np.linspace(0.0, 1.0, n_sub + 1)[:, None]
    return x0 + walk + frac * ((x1 - x0) - walk[-1])


def refine_path(path: BrownianPath, factor: int, rng: RandomSource) -> BrownianPath:
    """Bridge-interpolate every step into `factor` substeps (exact in law).

    Used for common-random-number comparisons across sausage radii: the
    refined path is a genuine Brownian path that agrees with the coarse one
    on the coarse grid.
    """
    if factor < 2:
        raise ValueError("factor must be >= 2")
    n, d = path.n_steps, path.dim
    gen = rng.generator()
    fine = path.step / factor
    out = np.empty((n * factor + 1, d), dtype=path.positions.dtype)
    out[0] = path.positions[0]
    frac = (np.arange(1, factor + 1, dtype=float) / factor)[:, None]
    sq = math.sqrt(fine)
    chunk = max(1, _GEN_CHUNK // factor)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        m = stop - start
        x0 = path.positions[start:stop].astype(float)          # (m, d)
        x1 = path.positions[start + 1: stop + 1].astype(float)
        inc = gen.standard_normal((m, factor, d)) * sq
        walk = np.cumsum(inc, axis=1)
        corr = (x1 - x0 - walk[:, -1, :])[:, None, :] * frac
        seg = x0[:, None, :] + walk + corr
        seg[:, -1, :] = x1  # exact endpoint match, no rounding drift
        out[start * factor + 1: stop * factor + 1] = seg.reshape(m * factor, d)
    return BrownianPath(dim=d, t0=path.t0, step=fine, positions=out)


def heat_kernel(s: float, x, z, dim: int) -> np.ndarray | float:
    """Transition density (2 pi s)^{-d/2} exp(-|x-z|^2 / (2s)).

    x and z broadcast; scalar in, scalar out.
    """
    if s <= 0 or not np.isfinite(s):
        raise ValueError("heat kernel needs time s > 0")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    diff = x - z
    if diff.ndim == 0:
        raise ValueError("points must have at least one coordinate")
    r2 = (diff**2).sum(axis=-1)
    val = (2.0 * np.pi * s) ** (-dim / 2.0) * np.exp(-r2 / (2.0 * s))
    return float(val) if np.isscalar(r2) or r2.ndim == 0 else val


def green_constant(dim: int) -> float:
    """c_d in G(z) = c_d |z|^{2-d}, d >= 3."""
    if dim < 3:
        raise ValueError("Green function requires d >= 3 (divergent for d = 2)")
    return _gamma(dim / 2.0 - 1.0) / (2.0 * np.pi ** (dim / 2.0))


def green_function(z, dim: int) -> np.ndarray | float:
    """Green function of d-dimensional Brownian motion, d >= 3."""
    if dim < 3:
        raise ValueError("Green function requires d >= 3 (divergent for d = 2)")
    z = np.asarray(z, dtype=float)
    r = np.sqrt((z**2).sum(axis=-1))
    if np.any(r == 0):
        raise ZeroDivisionError("Green function is singular at z = 0")
    val = green_constant(dim) * r ** (2.0 - dim)
    return float(val) if r.ndim == 0 else val
