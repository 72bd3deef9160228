"""Experiment configuration: JSON schema, validation, and spec parsers."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .geometry import Box, Domain
from .intensity import (BoxedIntensity, ConstantIntensity, IntensityField,
                        gaussian_bump, half_space_indicator)

KNOWN_EXPERIMENTS = (
    "ksw", "spitzer", "annealed-survival", "l2-rate", "feller-moments",
    "laplace-match", "quenched-sweep", "solve-w",
)


class ConfigError(ValueError):
    pass


def load_defaults() -> dict:
    with resources.files("sbm_traps").joinpath("experiment_defaults.json").open() as fh:
        return json.load(fh)


def subsequence(alpha: float, dim: int, n: int) -> float:
    """eps_n = exp(-n^alpha) for d=2, n^(-alpha) for d>=3; requires alpha > 1.

    alpha > 1 is exactly what makes sum eps_n |log eps_n| (d>=3) resp.
    sum 1/|log eps_n| (d=2) finite, the condition the quenched guarantee needs.
    """
    if n < 1:
        raise ConfigError("subsequence index n must be >= 1")
    if dim < 2:
        raise ConfigError("dim must be >= 2")
    if not subsequence_summable(alpha, dim):
        raise ConfigError(
            f"alpha={alpha} rejected: the subsequence summability condition needs alpha > 1")
    if dim == 2:
        return math.exp(-float(n) ** alpha)
    return float(n) ** (-alpha)


def subsequence_summable(alpha: float, dim: int) -> bool:
    return alpha > 1.0


def intensity_from_spec(spec: Optional[dict], dim: int) -> IntensityField:
    """Build an intensity field from its JSON description."""
    if spec is None:
        return ConstantIntensity(1.0)
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantIntensity(float(spec.get("value", 1.0)))
    if kind == "gaussian_bump":
        center = spec.get("center", [0.0] * dim)
        return gaussian_bump(center, float(spec["amplitude"]), float(spec["width"]))
    if kind == "half_space":
        return half_space_indicator(dim, axis=int(spec.get("axis", 0)),
                                    positive=bool(spec.get("positive", True)),
                                    value=float(spec.get("value", 1.0)))
    if kind == "boxed":
        pieces = tuple((Box(np.asarray(p["lo"], dtype=float), np.asarray(p["hi"], dtype=float)),
                        float(p["value"])) for p in spec["pieces"])
        return BoxedIntensity(pieces=pieces, background=float(spec.get("background", 0.0)))
    raise ConfigError(f"unknown intensity kind {kind!r}")


def domain_from_spec(spec: Optional[dict], dim: int) -> Domain:
    if spec is None:
        return Domain.full()
    kind = spec.get("kind")
    if kind == "full":
        return Domain.full()
    if kind == "ball":
        return Domain.ball(spec.get("center", [0.0] * dim), float(spec["radius"]))
    if kind == "box":
        if "half_width" in spec:
            c = np.asarray(spec.get("center", [0.0] * dim), dtype=float)
            return Domain.open_box(Box.cube(c, float(spec["half_width"])))
        return Domain.open_box(Box(np.asarray(spec["lo"], dtype=float),
                                   np.asarray(spec["hi"], dtype=float)))
    raise ConfigError(f"unknown domain kind {kind!r}")


@dataclass
class ExperimentConfig:
    """One experiment invocation; mirrors the JSON config file."""

    experiment: str
    seed: int = 1
    dim: Optional[int] = None
    eps: Optional[float] = None
    eps_sweep: Optional[Sequence[float]] = None
    alpha: Optional[float] = None
    subsequence_n: Optional[Sequence[int]] = None
    intensity: Optional[dict] = None
    domain: Optional[dict] = None
    n_per_mass: Optional[int] = None
    step: Optional[float] = None
    replicates: Optional[int] = None
    samples: Optional[int] = None
    inner_samples: Optional[int] = None
    threads: int = 1
    out: Optional[str] = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.experiment not in KNOWN_EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; known: {', '.join(KNOWN_EXPERIMENTS)}")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.dim is not None and self.dim < 2:
            raise ConfigError(f"dim must be >= 2, got {self.dim}")
        for name, value in (("eps", self.eps),):
            if value is not None and not (0.0 < value < 0.5):
                raise ConfigError(f"{name} must lie in (0, 1/2), got {value}")
        if self.eps_sweep is not None:
            for e in self.eps_sweep:
                if not (0.0 < e < 0.5):
                    raise ConfigError(f"eps_sweep entries must lie in (0, 1/2), got {e}")
        if self.replicates is not None and self.replicates < 1:
            raise ConfigError(f"replicates must be >= 1, got {self.replicates}")
        if self.samples is not None and self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if self.step is not None and self.step <= 0:
            raise ConfigError(f"step must be > 0, got {self.step}")
        if self.n_per_mass is not None and self.n_per_mass < 1:
            raise ConfigError(f"n_per_mass must be >= 1, got {self.n_per_mass}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.experiment == "quenched-sweep":
            alpha = self.alpha if self.alpha is not None else \
                load_defaults()["experiments"]["quenched-sweep"]["alpha"]
            if not subsequence_summable(alpha, self.dim or 3):
                raise ConfigError(
                    f"quenched sweep requires a summable subsequence (alpha > 1), got alpha={alpha}")

    def to_json(self) -> str:
        data = asdict(self)
        return json.dumps(data, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict) or "experiment" not in data:
            raise ConfigError("config must be a JSON object with an 'experiment' field")
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
        return ExperimentConfig(**data)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        with open(path) as fh:
            return ExperimentConfig.from_json(fh.read())
