"""Monte Carlo estimators for Wiener sausage functionals.

Volumes and weighted integrals use unbiased hit-or-miss sampling over the
path bounding box inflated by eps, with distance queries served by the
block-bucketed polyline index.  Small-ball hitting and occupation
functionals use a two-level scheme: a coarse path everywhere, refined by
exact Brownian bridges (plus a half-space crossing Bernoulli at the fine
scale) only on steps that approach the ball.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as _gamma

from .brownian import BrownianPath, bridge_fill, sample_brownian_path
from .geometry import Box
from .intensity import IntensityField
from .obstacles import sd_scale
from .polyline import PolylineIndex
from .rng import RandomSource, _RunningMoments

STEP_RULE_FACTOR = 5.0  # sausage queries require step <= (eps/5)^2


@dataclass(frozen=True)
class EstimateWithError:
    """Point estimate with standard error; the universal result carrier."""

    mean: float
    std_error: float
    replicates: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.std_error < 0 or not np.isfinite(self.std_error):
            raise ValueError("std_error must be finite and >= 0")

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error,
                "replicates": self.replicates, "meta": self.meta}


def mean_estimate(values, meta: Optional[dict] = None) -> EstimateWithError:
    values = np.asarray(values, dtype=float)
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return EstimateWithError(float(values.mean()), se, int(values.size), meta or {})


def max_step_for(eps: float) -> float:
    return (eps / STEP_RULE_FACTOR) ** 2


@dataclass(frozen=True)
class SausageQuery:
    """A path, a radius, and an optional weight function.

    Enforces the resolution rule step <= (eps/5)^2 so sub-step excursions
    are small compared to eps.
    """

    path: BrownianPath
    eps: float
    weight: Optional[IntensityField] = None

    def __post_init__(self):
        if not (self.eps > 0 and np.isfinite(self.eps)):
            raise ValueError("eps must be positive and finite")
        limit = max_step_for(self.eps)
        if self.path.step > limit * (1 + 1e-9):
            raise ValueError(
                f"path step {self.path.step:g} exceeds (eps/5)^2 = {limit:g}; "
                "resolve the path before querying the sausage")


def kd_constant(dim: int) -> float:
    """Newtonian capacity of the unit ball: pi for d=2, (d-2)pi^(d/2)/Gamma(d/2)."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if dim == 2:
        return math.pi
    return (dim - 2) * math.pi ** (dim / 2.0) / _gamma(dim / 2.0)


def _hit_or_miss(path: BrownianPath, eps: float, weight: Optional[IntensityField],
                 rng: RandomSource, samples: int,
                 index: Optional[PolylineIndex] = None,
                 box: Optional[Box] = None) -> EstimateWithError:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if box is None:
        box = path.bounding_box().inflate(eps)
    vol = box.volume
    if vol <= 0:
        raise ValueError("degenerate sampling box")
    if index is None:
        index = PolylineIndex(path.positions, eps)
    gen = rng.generator()
    acc = _RunningMoments()
    hits = 0
    chunk = 262_144
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        pts = box.sample(gen, m)
        inside = index.within(pts)
        hits += int(inside.sum())
        values = np.zeros(m)
        if weight is None:
            values[inside] = vol
        else:
            values[inside] = vol * weight(pts[inside])
        acc.add(values)
        done += m
    meta = {"box_volume": vol, "hits": hits, "hit_fraction": hits / samples}
    return EstimateWithError(acc.mean, acc.std_error, samples, meta)


def sausage_volume(q: SausageQuery, rng: RandomSource, samples: int,
                   index: Optional[PolylineIndex] = None) -> EstimateWithError:
    """Unbiased hit-or-miss estimate of lambda(S_eps) over the inflated bbox."""
    return _hit_or_miss(q.path, q.eps, None, rng, samples, index=index)


def sausage_weighted_integral(q: SausageQuery, rng: RandomSource, samples: int,
                              index: Optional[PolylineIndex] = None) -> EstimateWithError:
    """Hit-or-miss estimate of the weighted integral of c over S_eps."""
    if q.weight is None:
        raise ValueError("query has no weight field")
    return _hit_or_miss(q.path, q.eps, q.weight, rng, samples, index=index)


def path_time_integral(path: BrownianPath, c: IntensityField) -> float:
    """Trapezoidal quadrature of c along the path."""
    vals = c(path.positions.astype(np.float64))
    return float(path.step * (vals.sum() - 0.5 * (vals[0] + vals[-1])))


def intersection_volume(path_a: BrownianPath, path_b: BrownianPath, eps: float,
                        rng: RandomSource, samples: int) -> EstimateWithError:
    """Volume of the overlap of two sausages of common radius eps."""
    if path_a.dim != path_b.dim:
        raise ValueError("paths must share a dimension")
    box = path_a.bounding_box().inflate(eps).intersect(path_b.bounding_box().inflate(eps))
    if box is None:
        return EstimateWithError(0.0, 0.0, samples, {"disjoint_boxes": True})
    idx_a = PolylineIndex(path_a.positions, eps)
    idx_b = PolylineIndex(path_b.positions, eps)
    gen = rng.generator()
    acc = _RunningMoments()
    vol = box.volume
    done = 0
    hits = 0
    while done < samples:
        m = min(262_144, samples - done)
        pts = box.sample(gen, m)
        inside = idx_a.within(pts)
        inside[inside] = idx_b.within(pts[inside])
        hits += int(inside.sum())
        values = np.where(inside, vol, 0.0)
        acc.add(values)
        done += m
    return EstimateWithError(acc.mean, acc.std_error, samples,
                             {"box_volume": vol, "hits": hits})


def union_intersection_volumes(path_a: BrownianPath, path_b: BrownianPath, eps: float,
                               rng: RandomSource, samples: int) -> dict:
    """vol(A), vol(B), vol(A|B), vol(A&B) from one common point set.

    With shared sample points and a shared box the inclusion-exclusion
    identity holds exactly at the level of integer hit counts.
    """
    lo = np.minimum(path_a.positions.min(axis=0), path_b.positions.min(axis=0))
    hi = np.maximum(path_a.positions.max(axis=0), path_b.positions.max(axis=0))
    box = Box(lo, hi).inflate(eps)
    idx_a = PolylineIndex(path_a.positions, eps)
    idx_b = PolylineIndex(path_b.positions, eps)
    gen = rng.generator()
    counts = {"a": 0, "b": 0, "union": 0, "intersection": 0}
    done = 0
    while done < samples:
        m = min(262_144, samples - done)
        pts = box.sample(gen, m)
        in_a = idx_a.within(pts)
        in_b = idx_b.within(pts)
        counts["a"] += int(in_a.sum())
        counts["b"] += int(in_b.sum())
        counts["union"] += int((in_a | in_b).sum())
        counts["intersection"] += int((in_a & in_b).sum())
        done += m
    vol = box.volume
    out = {k: vol * v / samples for k, v in counts.items()}
    out["counts"] = counts
    out["box_volume"] = vol
    return out


# -- small-ball functionals (two-level bridge refinement) --------------------


def _two_level_ball(gen: np.random.Generator, start: np.ndarray, target: np.ndarray,
                    eps: float, horizon: float, coarse: float, fine: float,
                    want_occupation: bool):
    """Simulate one path; return (hit_by_horizon, occupation_time_in_ball).

    Coarse steps whose segment stays farther than eps + 6 sqrt(coarse) from
    the target cannot touch the ball (bridge deviation beyond 6 sigma);
    triggered steps are refilled as exact Brownian bridges at the fine scale,
    where vertices are tested directly and residual sub-fine crossings get
    the half-space Bernoulli correction.
    """
    n = int(math.ceil(horizon / coarse - 1e-12))
    d = start.size
    inc = gen.standard_normal((n, d)) * math.sqrt(coarse)
    pos = np.vstack([start, start + np.cumsum(inc, axis=0)])
    dist = np.sqrt(((pos - target) ** 2).sum(axis=1))
    trigger = eps + 6.0 * math.sqrt(coarse)
    near = (dist[:-1] <= trigger) | (dist[1:] <= trigger)
    n_sub = max(int(round(coarse / fine)), 2)
    occupation = 0.0
    hit = False
    fine_dt = coarse / n_sub
    for i in np.nonzero(near)[0]:
        seg = bridge_fill(gen, pos[i], pos[i + 1], coarse, n_sub)
        dseg = np.sqrt(((seg - target) ** 2).sum(axis=1))
        inside = dseg <= eps
        if want_occupation:
            occupation += fine_dt * float(inside[:-1].sum())
        if not hit:
            if inside.any():
                hit = True
            else:
                clear = dseg - eps
                p = np.exp(-2.0 * clear[:-1] * clear[1:] / fine_dt)
                if (gen.random(p.size) < p).any():
                    hit = True
        if hit and not want_occupation:
            break
    return hit, occupation


def point_hitting_probability(y, eps: float, t: float, rng: RandomSource,
                              replicates: int, coarse_step: Optional[float] = None
                              ) -> EstimateWithError:
    """P_0[the path enters the closed ball B(y, eps) by time t]."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = y.size
    r = float(np.sqrt((y**2).sum()))
    if r <= eps:
        return EstimateWithError(1.0, 0.0, replicates, {"starts_inside": True})
    fine = max_step_for(eps)
    if coarse_step is None:
        coarse_step = max(fine, min((r / 14.0) ** 2, t / 50.0))
    coarse_step = max(coarse_step, fine)
    hits = 0
    for rep in range(replicates):
        gen = rng.split("hit", rep).generator()
        hit, _ = _two_level_ball(gen, np.zeros(d), y, eps, t, coarse_step, fine,
                                 want_occupation=False)
        hits += int(hit)
    p = hits / replicates
    se = math.sqrt(p * (1.0 - p) / replicates)
    return EstimateWithError(p, se, replicates,
                             {"coarse_step": coarse_step, "fine_step": fine})


def spitzer_reference(y, eps: float) -> float:
    """(pi/|log eps|) * integral_0^1 p_s(y) ds for d = 2, by adaptive quadrature."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != 2:
        raise ValueError("Spitzer reference is a planar quantity (d = 2)")
    r2 = float((y**2).sum())
    if r2 == 0.0:
        raise ValueError("integrand diverges at y = 0")
    if not (0 < eps < 0.5):
        raise ValueError("eps must lie in (0, 1/2)")

    def integrand(s):
        return math.exp(-r2 / (2.0 * s)) / (2.0 * math.pi * s)

    val, _ = quad(integrand, 0.0, 1.0, limit=200)
    return math.pi / abs(math.log(eps)) * val


def occupation_time_f(eps: float, rng: RandomSource, replicates: int,
                      horizon: float = 1.0, coarse_step: Optional[float] = None
                      ) -> EstimateWithError:
    """E[time in B(0, eps) before `horizon`], started on the circle of radius eps.

    Planar quantity; behaves like eps^2 |log eps| for small eps.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    fine = max_step_for(eps)
    if coarse_step is None:
        coarse_step = max(fine, min(2.5e-5, horizon / 200.0))
    coarse_step = max(coarse_step, fine)
    start = np.array([eps, 0.0])
    target = np.zeros(2)
    vals = np.empty(replicates)
    for rep in range(replicates):
        gen = rng.split("occupation", rep).generator()
        _, occ = _two_level_ball(gen, start, target, eps, horizon, coarse_step, fine,
                                 want_occupation=True)
        vals[rep] = occ
    est = mean_estimate(vals, {"coarse_step": coarse_step, "fine_step": fine})
    return est


# -- rate diagnostics (Prop-2.1-type quantities) -----------------------------


def _scaled_discrepancy(path: BrownianPath, c: IntensityField, eps: float, dim: int,
                        rng: RandomSource, inner_samples: int,
                        index: Optional[PolylineIndex] = None):
    """s_d(eps) * (weighted-integral estimate) - k_d * path integral, with its SE."""
    s = sd_scale(eps, dim)
    q = SausageQuery(path, eps, weight=c)
    est = sausage_weighted_integral(q, rng, inner_samples, index=index)
    base = kd_constant(dim) * path_time_integral(path, c)
    return s * est.mean - base, s * est.std_error


def l2_error_h(c: IntensityField, eps: float, x, t: float, rng: RandomSource,
               replicates: int, inner_samples: int = 100_000, dim: int = 3
               ) -> EstimateWithError:
    """Mean squared discrepancy E[(s_d(eps) int_S c - k_d int c(xi))^2].

    Each replicate multiplies two conditionally independent inner estimates
    of the discrepancy, which keeps the estimator unbiased for the square:
    the naive square of one noisy inner estimate would add the inner variance
    (growing like s_d(eps)^2) and mask the epsilon-rate this quantity exists
    to measure.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    step = max_step_for(eps)
    products = np.empty(replicates)
    inner_ses = np.empty(replicates)
    for rep in range(replicates):
        path_rng = rng.split("h-path", rep)
        path = sample_brownian_path(path_rng, x, 0.0, t, step, dim)
        index = PolylineIndex(path.positions, eps)
        d1, se1 = _scaled_discrepancy(path, c, eps, dim, rng.split("h-inner-a", rep),
                                      inner_samples, index=index)
        d2, se2 = _scaled_discrepancy(path, c, eps, dim, rng.split("h-inner-b", rep),
                                      inner_samples, index=index)
        products[rep] = d1 * d2
        inner_ses[rep] = 0.5 * (se1 + se2)
    est = mean_estimate(products)
    inner_var = float((inner_ses**2).mean())
    meta = {
        "inner_samples": inner_samples,
        "inner_rms_se": math.sqrt(inner_var),
        "outer_std": float(products.std(ddof=1)) if replicates > 1 else 0.0,
        "inner_noise_dominates": inner_var > max(est.mean, 0.0),
    }
    return EstimateWithError(est.mean, est.std_error, replicates, meta)


def v_bias_estimate(c: IntensityField, eps: float, z, rng: RandomSource,
                    replicates: int, inner_samples: int = 100_000, dim: int = 3,
                    horizon: float = 0.5) -> EstimateWithError:
    """Signed mean discrepancy E_z[s_d(eps) int_S c - k_d int c(xi)] on [0, horizon]."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    step = max_step_for(eps)
    vals = np.empty(replicates)
    for rep in range(replicates):
        path = sample_brownian_path(rng.split("v-path", rep), z, 0.0, horizon, step, dim)
        d, _ = _scaled_discrepancy(path, c, eps, dim, rng.split("v-inner", rep),
                                   inner_samples)
        vals[rep] = d
    return mean_estimate(vals, {"inner_samples": inner_samples, "horizon": horizon})
