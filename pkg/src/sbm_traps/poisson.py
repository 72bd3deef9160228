"""Inhomogeneous Poisson point sampling by thinning."""
from __future__ import annotations

import numpy as np

from .geometry import Box
from .intensity import IntensityField
from .rng import RandomSource


def sample_poisson_points(rng: RandomSource, region: Box, intensity: IntensityField,
                          scale: float) -> np.ndarray:
    """Points of a Poisson process with intensity scale * c(x) dx on `region`.

    Homogeneous Poisson(scale * bound * vol) proposal, thinned with
    acceptance c(x)/bound; this is the exact inhomogeneous law.
    """
    if scale < 0 or not np.isfinite(scale):
        raise ValueError("scale must be finite and >= 0")
    bound = intensity.bound
    if not np.isfinite(bound):
        raise ValueError("intensity bound must be finite")
    gen = rng.generator()
    lam = scale * bound * region.volume
    if lam == 0.0:
        return np.empty((0, region.dim))
    n = gen.poisson(lam)
    if n == 0:
        return np.empty((0, region.dim))
    proposals = region.sample(gen, n)
    u = gen.random(n)
    keep = u * bound <= intensity(proposals)
    return proposals[keep]
