"""Branching Brownian particle approximation of super-Brownian motion.

N particles of mass 1/N per unit initial mass, critical binary branching at
rate 2N per particle (death or twin with probability 1/2 each), Euler motion
with step `step`.  Branching within a step is compounded exactly: the number
of descendants a particle leaves after one step of the rate-N critical
birth-death chain is 0 with probability a/(1+a) and geometric otherwise
(a = N * step), so the total-mass chain follows the exact continuous-time
law at the step times for any step size.

Killing modes:
  free          no killing
  obstacle      removed at first entry into the obstacle set or out of the
                open domain (segment test + Brownian-bridge Bernoulli)
  rate          survives each step with probability exp(-k_d c(mid) * step),
                plus the domain exit rule

Killed runs can be produced either online (cheap) or by filtering a recorded
free run, which shares the branching genealogy pathwise and realizes the
ancestral-path restriction directly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import Box, Domain
from .intensity import IntensityField
from .obstacles import Environment
from .probes import LaplaceProbe, TestFunction
from .rng import RandomSource
from .sausage import EstimateWithError, kd_constant, mean_estimate

_TIME_TOL = 1e-9


# -- initial measures --------------------------------------------------------


class InitialMeasure:
    """Finite initial measure mu, materialized as ceil(N * mass) iid atoms."""

    mass: float = 1.0
    dim: int = 1

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def materialize(self, n_per_mass: int, gen: np.random.Generator) -> np.ndarray:
        n = int(math.ceil(n_per_mass * self.mass))
        return self.sample(gen, n)


@dataclass(frozen=True)
class PointMass(InitialMeasure):
    point: np.ndarray = None
    mass: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "point", np.atleast_1d(np.asarray(self.point, dtype=float)))
        if self.mass <= 0:
            raise ValueError("mass must be > 0")

    @property
    def dim(self) -> int:
        return self.point.size

    def sample(self, gen, n):
        return np.tile(self.point, (n, 1))


@dataclass(frozen=True)
class UniformBall(InitialMeasure):
    center: np.ndarray = None
    radius: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.radius <= 0 or self.mass <= 0:
            raise ValueError("need radius > 0 and mass > 0")

    @property
    def dim(self) -> int:
        return self.center.size

    def sample(self, gen, n):
        d = self.dim
        x = gen.standard_normal((n, d))
        x /= np.sqrt((x**2).sum(axis=1))[:, None]
        r = self.radius * gen.random(n) ** (1.0 / d)
        return self.center + x * r[:, None]


@dataclass(frozen=True)
class UniformBox(InitialMeasure):
    box: Box = None
    mass: float = 1.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be > 0")

    @property
    def dim(self) -> int:
        return self.box.dim

    def sample(self, gen, n):
        return self.box.sample(gen, n)


# -- states and runs ---------------------------------------------------------


@dataclass(frozen=True)
class MeasureState:
    """Weighted atomic measure: count particles of mass unit_mass at `time`.

    positions is None for mass-only runs (motion skipped); such states can
    only be integrated against constant test functions.
    """

    time: float
    unit_mass: float
    dim: int
    count: int
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.count < 0 or self.unit_mass <= 0:
            raise ValueError("count must be >= 0 and unit_mass > 0")
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=float)
            if pos.shape != (self.count, self.dim):
                raise ValueError("positions shape inconsistent with count/dim")
            if pos.size and not np.isfinite(pos).all():
                raise ValueError("positions must be finite")
            object.__setattr__(self, "positions", pos)

    @property
    def total_mass(self) -> float:
        return self.count * self.unit_mass

    def integrate(self, f: TestFunction) -> float:
        """<X_t, f> = unit_mass * sum_i f(x_i)."""
        if f.is_constant:
            return self.total_mass * f(np.zeros((1, self.dim)))[0]
        if self.positions is None:
            raise ValueError("mass-only snapshot cannot integrate a non-constant function")
        if self.count == 0:
            return 0.0
        return self.unit_mass * float(f(self.positions).sum())


@dataclass
class SimulationRun:
    """Snapshots of one replicate plus the genealogy tag of its noise."""

    snapshots: dict
    genealogy: str
    meta: dict = field(default_factory=dict)
    history: Optional[list] = None

    def state(self, t: float) -> MeasureState:
        key = _time_key(t)
        if key not in self.snapshots:
            raise KeyError(f"no snapshot at time {t}")
        return self.snapshots[key]

    def times(self):
        return sorted(s.time for s in self.snapshots.values())

    def masses(self):
        return {s.time: s.total_mass for s in self.snapshots.values()}


def _time_key(t: float) -> int:
    return int(round(t / _TIME_TOL / 1000))


@dataclass(frozen=True)
class ParticleSystem:
    """Configuration of the branching particle approximation."""

    n_per_mass: int
    step: float
    dim: int
    mode: str = "free"  # "free" | "obstacle" | "rate"
    environment: Optional[Environment] = None
    domain: Domain = None
    intensity: Optional[IntensityField] = None
    branch_rate: Optional[float] = None  # default 2 * n_per_mass
    track_positions: bool = True
    bridge_kill: bool = True

    def __post_init__(self):
        if self.n_per_mass <= 0:
            raise ValueError("n_per_mass must be >= 1")
        if self.step <= 0:
            raise ValueError("step must be > 0")
        if self.domain is None:
            object.__setattr__(self, "domain", Domain.full())
        if self.mode not in ("free", "obstacle", "rate"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "obstacle":
            if self.environment is None:
                raise ValueError("obstacle mode needs an environment")
            margin = self.environment.eps + 6.0 * math.sqrt(self.step)
            dom_box = self.domain.bounding_box()
            if dom_box is None:
                raise ValueError("obstacle mode needs a bounded domain (declared simulation box)")
            if not self.environment.gen_region.contains_box(dom_box.inflate(margin)):
                raise ValueError(
                    "environment gen_region must cover the domain inflated by "
                    "eps + 6 sqrt(step); particles could see missing obstacles")
        if self.mode == "rate" and self.intensity is None:
            raise ValueError("rate mode needs an intensity field")
        if not self.track_positions and self.mode != "free":
            raise ValueError("mass-only runs are free mode only")

    @property
    def effective_branch_rate(self) -> float:
        return 2.0 * self.n_per_mass if self.branch_rate is None else self.branch_rate


def _branch_counts(gen: np.random.Generator, n: int, a: float) -> np.ndarray:
    """Exact descendant counts after one step of the critical birth-death chain."""
    counts = np.zeros(n, dtype=np.int64)
    if a == 0.0:
        counts[:] = 1
        return counts
    p0 = a / (1.0 + a)
    u = gen.random(n)
    alive = u >= p0
    m = int(alive.sum())
    if m:
        counts[alive] = gen.geometric(1.0 / (1.0 + a), m)
    return counts


def _obstacle_killed(env: Environment, start: np.ndarray, end: np.ndarray, step: float,
                     gen: Optional[np.random.Generator]) -> np.ndarray:
    """Per-particle first-entry test for one Euler step (closed balls)."""
    n = start.shape[0]
    killed = np.zeros(n, dtype=bool)
    if env.n_centers == 0 or n == 0:
        return killed
    mid = 0.5 * (start + end)
    half = 0.5 * np.sqrt(((end - start) ** 2).sum(axis=1))
    r_query = env.eps + 6.0 * math.sqrt(step) + float(half.max(initial=0.0))
    owner, cidx = env._gather_pairs(mid, r_query)
    if owner.size == 0:
        return killed
    a = start[owner]
    b = end[owner]
    cen = env.centers[cidx]
    v = b - a
    w = a - cen
    vv = (v * v).sum(axis=1)
    t = np.clip(-(w * v).sum(axis=1) / np.where(vv > 0, vv, 1.0), 0.0, 1.0)
    seg_d2 = ((w + t[:, None] * v) ** 2).sum(axis=1)
    det = seg_d2 <= env.eps**2
    killed[owner[det]] = True
    if gen is None:
        return killed
    cand = ~det & ~killed[owner]
    if cand.any():
        # nearest candidate center per particle, by closest approach
        sub_owner = owner[cand]
        order = np.lexsort((seg_d2[cand], sub_owner))
        lead = np.ones(order.size, dtype=bool)
        lead[1:] = sub_owner[order][1:] != sub_owner[order][:-1]
        pick = np.nonzero(cand)[0][order[lead]]
        d_a = np.sqrt((w[pick] ** 2).sum(axis=1))
        d_b = np.sqrt(((b[pick] - cen[pick]) ** 2).sum(axis=1))
        p = np.exp(-2.0 * np.maximum(d_a - env.eps, 0.0)
                   * np.maximum(d_b - env.eps, 0.0) / step)
        crossed = gen.random(p.size) < p
        killed[owner[pick][crossed]] = True
    return killed


def _restrict_initial(sys: ParticleSystem, pos: np.ndarray) -> np.ndarray:
    alive = sys.domain.contains(pos)
    if sys.mode == "obstacle":
        alive &= ~sys.environment.within(pos)
    return alive


def simulate(sys: ParticleSystem, mu: InitialMeasure, rng: RandomSource, t_end: float,
             snapshot_times: Sequence[float], record_history: bool = False
             ) -> SimulationRun:
    """Run one replicate and return snapshots at the requested times.

    Step order within [t, t+step]: motion, killing (first-entry semantics),
    then branching of survivors.  Snapshot times must lie on the step grid.
    """
    if t_end <= 0:
        raise ValueError("t_end must be > 0")
    n_steps = int(round(t_end / sys.step))
    if abs(n_steps * sys.step - t_end) > _TIME_TOL * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a multiple of step={sys.step}")
    want = {}
    for t in snapshot_times:
        k = int(round(t / sys.step))
        if abs(k * sys.step - t) > _TIME_TOL * max(1.0, abs(t)) or not 0 <= k <= n_steps:
            raise ValueError(f"snapshot time {t} is not on the step grid")
        want.setdefault(k, float(t))

    motion = rng.split("motion").generator()
    branch = rng.split("branch").generator()
    kill = rng.split("kill").generator()
    init = rng.split("init").generator()

    pos = mu.materialize(sys.n_per_mass, init)
    if pos.shape[1] != sys.dim:
        raise ValueError("initial measure dimension mismatch")
    alive0 = _restrict_initial(sys, pos)
    pos = pos[alive0]

    unit = 1.0 / sys.n_per_mass
    a = 0.5 * sys.effective_branch_rate * sys.step
    sq = math.sqrt(sys.step)
    kd = kd_constant(sys.dim)

    snapshots = {}
    history = [] if record_history else None
    if record_history:
        history.append({"initial_positions": pos.copy()})

    def snap(k, n_alive, positions):
        t = want[k]
        snapshots[_time_key(t)] = MeasureState(
            time=t, unit_mass=unit, dim=sys.dim, count=n_alive,
            positions=positions.copy() if sys.track_positions else None)

    if 0 in want:
        snap(0, pos.shape[0], pos)

    for k in range(1, n_steps + 1):
        n = pos.shape[0]
        if n == 0:
            if record_history:
                history.append({"start": pos.copy(), "end": pos.copy(),
                                "counts": np.zeros(0, dtype=np.int64)})
            if k in want:
                snap(k, 0, pos)
            continue
        if sys.track_positions:
            new = pos + motion.standard_normal((n, sys.dim)) * sq
        else:
            new = pos
        killed = np.zeros(n, dtype=bool)
        if sys.mode == "obstacle":
            killed = _obstacle_killed(sys.environment, pos, new, sys.step,
                                      kill if sys.bridge_kill else None)
            killed |= ~sys.domain.contains(new)
        elif sys.mode == "rate":
            rate = kd * sys.intensity(0.5 * (pos + new))
            if rate.max(initial=0.0) > 0:
                killed = kill.random(n) >= np.exp(-rate * sys.step)
            killed |= ~sys.domain.contains(new)
        counts = _branch_counts(branch, n, a)
        counts[killed] = 0
        if record_history:
            history.append({"start": pos.copy(), "end": new.copy(), "counts": counts.copy()})
        if sys.track_positions:
            pos = np.repeat(new, counts, axis=0)
        else:
            pos = np.zeros((int(counts.sum()), sys.dim))
        if k in want:
            snap(k, pos.shape[0], pos)

    genealogy = f"{rng.seed}:{rng.stream_id}:{sys.n_per_mass}:{sys.step}:{n_steps}"
    return SimulationRun(snapshots=snapshots, genealogy=genealogy, history=history,
                         meta={"mode": sys.mode, "n_steps": n_steps})


def filter_killed(history: list, sys_free: ParticleSystem, env: Optional[Environment],
                  domain: Domain, snapshot_times: Sequence[float],
                  kill_rng: Optional[RandomSource] = None) -> SimulationRun:
    """Killed run derived from a recorded free run (common genealogy).

    A particle is alive iff its entire ancestral path stayed inside the open
    domain and clear of the obstacles; killing removes whole subtrees, so
    the filtered mass is dominated by the free mass at every time, pathwise.
    """
    if history is None:
        raise ValueError("free run must be recorded with record_history=True")
    step = sys_free.step
    gen = kill_rng.split("filter-kill").generator() if kill_rng is not None else None
    want = {int(round(t / step)): float(t) for t in snapshot_times}
    unit = 1.0 / sys_free.n_per_mass
    snapshots = {}
    pos0 = history[0]["initial_positions"]
    alive = domain.contains(pos0)
    if env is not None:
        alive &= ~env.within(pos0)
    if 0 in want:
        t = want[0]
        snapshots[_time_key(t)] = MeasureState(
            time=t, unit_mass=unit, dim=sys_free.dim, count=int(alive.sum()),
            positions=pos0[alive].copy())
    for k, rec in enumerate(history[1:], start=1):
        start, end, counts = rec["start"], rec["end"], rec["counts"]
        if start.shape[0]:
            killed = ~domain.contains(end)
            if env is not None:
                check = alive & ~killed
                if check.any():
                    sub = _obstacle_killed(env, start[check], end[check], step, gen)
                    tmp = np.zeros(start.shape[0], dtype=bool)
                    tmp[np.nonzero(check)[0][sub]] = True
                    killed |= tmp
            alive = np.repeat(alive & ~killed, counts)
        if k in want:
            t = want[k]
            pos = np.repeat(end, counts, axis=0)[alive]
            snapshots[_time_key(t)] = MeasureState(
                time=t, unit_mass=unit, dim=sys_free.dim, count=int(alive.sum()),
                positions=pos.copy())
    return SimulationRun(snapshots=snapshots, genealogy="", meta={"mode": "filtered"})


def simulate_coupled(sys_free: ParticleSystem, mu: InitialMeasure, rng: RandomSource,
                     t_end: float, snapshot_times: Sequence[float],
                     env: Optional[Environment], domain: Domain):
    """Free run plus obstacle-killed run sharing branching tree and motion noise."""
    free_run = simulate(sys_free, mu, rng, t_end, snapshot_times, record_history=True)
    killed_run = filter_killed(free_run.history, sys_free, env, domain, snapshot_times,
                               kill_rng=rng)
    killed_run.genealogy = free_run.genealogy
    return free_run, killed_run


@dataclass(frozen=True)
class DominationReport:
    ok: bool
    n_times: int
    max_violation: float
    details: dict


def domination_check(free_run: SimulationRun, killed_run: SimulationRun) -> DominationReport:
    """Assert <X_killed, 1> <= <X_free, 1> at every common snapshot, pathwise."""
    if free_run.genealogy != killed_run.genealogy or not free_run.genealogy:
        raise ValueError("runs do not share a genealogy (common random numbers required)")
    free_masses = free_run.masses()
    killed_masses = killed_run.masses()
    times = sorted(set(free_masses) & set(killed_masses))
    if not times:
        raise ValueError("no common snapshot times")
    diffs = {t: killed_masses[t] - free_masses[t] for t in times}
    worst = max(diffs.values())
    return DominationReport(ok=worst <= 0.0, n_times=len(times), max_violation=max(worst, 0.0),
                            details={"masses_free": free_masses, "masses_killed": killed_masses})


# -- functionals over replicate collections ---------------------------------


def laplace_functional(runs: Sequence[SimulationRun], probe: LaplaceProbe
                       ) -> EstimateWithError:
    """Empirical mean of exp(-sum_i <X_{t_i}, f_i>) over replicates."""
    vals = np.empty(len(runs))
    for j, run in enumerate(runs):
        s = 0.0
        for t, f in zip(probe.times, probe.fns):
            s += run.state(t).integrate(f)
        vals[j] = math.exp(-s)
    return mean_estimate(vals, {"probe_times": list(probe.times)})


def total_mass_moments(masses: Sequence[float], y: float) -> dict:
    """Central sample moments of the replicate total masses."""
    m = np.asarray(masses, dtype=float)
    if m.size < 2:
        raise ValueError("need at least 2 replicates")
    mean = float(m.mean())
    centered = m - mean
    return {
        "mean": mean,
        "var": float((centered**2).sum() / (m.size - 1)),
        "m3": float((centered**3).mean()),
        "m4": float((centered**4).mean()),
        "replicates": int(m.size),
        "initial_mass": float(y),
    }


def quadratic_variation_check(runs: Sequence[SimulationRun], phi: TestFunction
                              ) -> EstimateWithError:
    """Realized variance of the martingale part vs 2 int <X_r, phi^2> dr.

    M_t = <X_t,phi> - <X_0,phi> - int <X_r, Lap(phi)/2> dr is computed by
    trapezoidal quadrature over the (dense) snapshot grid; the ratio
    Var(M_T) / E[2 int <X_r, phi^2> dr] should be near 1.
    """

    class _HalfLap(TestFunction):
        sup = math.inf
        is_constant = False

        def __call__(self, pts):
            return 0.5 * phi.laplacian(pts)

    class _Sq(TestFunction):
        sup = phi.sup**2
        is_constant = phi.is_constant

        def __call__(self, pts):
            return phi(pts) ** 2

    half_lap, phi_sq = _HalfLap(), _Sq()
    m_vals = np.empty(len(runs))
    predicted = np.empty(len(runs))
    for j, run in enumerate(runs):
        times = run.times()
        w_phi = np.array([run.state(t).integrate(phi) for t in times])
        w_lap = np.array([run.state(t).integrate(half_lap) for t in times])
        w_sq = np.array([run.state(t).integrate(phi_sq) for t in times])
        m_vals[j] = w_phi[-1] - w_phi[0] - np.trapezoid(w_lap, times)
        predicted[j] = 2.0 * np.trapezoid(w_sq, times)
    realized = float(m_vals.var(ddof=1))
    pred = float(predicted.mean())
    if pred == 0.0:
        return EstimateWithError(0.0 if realized == 0.0 else math.inf, 0.0, len(runs),
                                 {"realized": realized, "predicted": pred})
    ratio = realized / pred
    # delta-method error bar on the variance ratio (kurtosis term dominates)
    m4 = float(((m_vals - m_vals.mean()) ** 4).mean())
    var_of_var = max(m4 - realized**2, 0.0) / len(runs)
    se = math.sqrt(var_of_var) / pred
    return EstimateWithError(ratio, se, len(runs),
                             {"realized": realized, "predicted": pred})


def snapshots_to_jsonl(runs: Sequence[SimulationRun], path, include_positions: bool = False
                       ) -> None:
    """One snapshot per line: time, count, mass, optional positions."""
    with open(path, "w") as fh:
        for j, run in enumerate(runs):
            for t in run.times():
                st = run.state(t)
                rec = {"replicate": j, "time": st.time, "count": st.count,
                       "mass": st.total_mass}
                if include_positions and st.positions is not None:
                    rec["positions"] = st.positions.tolist()
                fh.write(json.dumps(rec) + "\n")
