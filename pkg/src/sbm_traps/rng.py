"""Counter-based random sources with named, collision-free substreams.

Every stochastic routine in the package takes a RandomSource instead of a bare
seed.  A RandomSource is a (seed, stream_id) pair mapped onto a Philox
counter-based generator, so identical pairs replay identical draw sequences
and distinct stream_ids give statistically independent streams regardless of
thread scheduling or call order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_for(label: str, replicate: int = 0) -> int:
    """Stable 64-bit stream id for (experiment label, replicate index).

    Uses blake2b rather than hash() so ids survive interpreter restarts.
    """
    h = hashlib.blake2b(f"{label}\x1f{replicate}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RandomSource:
    """Seed plus substream index for a splittable counter-based generator.

    The same (seed, stream_id) always yields the same generator state; a
    RandomSource is meant to be owned by exactly one execution strand, with
    parallel work split via distinct stream_ids.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)):
            raise TypeError(f"seed must be an integer, got {type(self.seed).__name__}")
        if not isinstance(self.stream_id, (int, np.integer)):
            raise TypeError(f"stream_id must be an integer, got {type(self.stream_id).__name__}")

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator keyed by (seed, stream_id)."""
        key = ((int(self.seed) & _MASK64) << 64) | (int(self.stream_id) & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def split(self, label: str, replicate: int = 0) -> "RandomSource":
        """Derived source for a named sub-task; independent of the parent stream."""
        mixed = stream_for(label, replicate) ^ (int(self.stream_id) & _MASK64)
        return RandomSource(self.seed, mixed)


@dataclass
class _RunningMoments:
    """Chan et al. pairwise-mergeable mean/M2 accumulator."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return
        n_b = values.size
        mean_b = float(values.mean())
        m2_b = float(((values - mean_b) ** 2).sum())
        delta = mean_b - self.mean
        n = self.n + n_b
        self.m2 += m2_b + delta * delta * self.n * n_b / n
        self.mean += delta * n_b / n
        self.n = n

    def merge(self, other: "_RunningMoments") -> None:
        self.add_moments(other.n, other.mean, other.m2)

    def add_moments(self, n_b: int, mean_b: float, m2_b: float) -> None:
        if n_b == 0:
            return
        delta = mean_b - self.mean
        n = self.n + n_b
        self.m2 += m2_b + delta * delta * self.n * n_b / n
        self.mean += delta * n_b / n
        self.n = n

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def std_error(self) -> float:
        return float(np.sqrt(self.variance / self.n)) if self.n > 1 else 0.0
