"""Ensembles of trajectories and empirical probes of dissipativity and compactness."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MismatchedSampling, RadiusInfeasible
from .grid import Grid, GridFunction, MobilitySpec, cell_norm, dist_V, mobility_operator_apply
from .potentials import PotentialSpec, RegularizedPotential
from .timestepper import SimConfig, StepState, Trajectory, prepare_initial, run

DEFAULT_RHO_LADDER = (0.4, 0.2, 0.1, 0.05)


@dataclass(frozen=True)
class EnsembleConfig:
    count: int
    radius: float
    mean_band: float
    seed: int
    sample_times: tuple[float, ...]
    base: SimConfig
    modes: int = 8
    # "V" uses the finite-energy distance, "H" plain L2 distances
    metric: str = "V"
    rho_ladder: tuple[float, ...] = DEFAULT_RHO_LADDER

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("ensemble needs at least one member")
        if list(self.sample_times) != sorted(set(self.sample_times)):
            raise ValueError("sample_times must be strictly increasing")
        if self.metric not in ("V", "H"):
            raise ValueError("metric must be 'V' or 'H'")


def _random_profile(grid: Grid, rng: np.random.Generator, modes: int) -> np.ndarray:
    """Mean-zero cosine series with 1/k-decaying Gaussian coefficients."""
    k = np.arange(modes + 1)
    x = grid.centers()
    if grid.dim == 1:
        coef = rng.standard_normal(modes + 1) / np.maximum(k, 1)
        coef[0] = 0.0
        basis = np.cos(np.pi * np.outer(x[0], k) / grid.extent)
        field = basis @ coef
    else:
        kx, ky = np.meshgrid(k, k, indexing="ij")
        coef = rng.standard_normal((modes + 1, modes + 1)) / np.maximum(np.hypot(kx, ky), 1)
        coef[0, 0] = 0.0
        cx = np.cos(np.pi * np.multiply.outer(x[0][:, 0], k) / grid.extent)
        field = cx @ coef @ cx.T
    field = field - field.mean()
    return field / cell_norm(grid, field)


def _distance(v, z, spec, metric):
    if metric == "H":
        return cell_norm(v.grid, v.flat - z.flat)
    return dist_V(v, z, spec)


def generate_ensemble(cfg: EnsembleConfig, spec: PotentialSpec, grid: Grid) -> list[GridFunction]:
    """Band-limited random initial data with |mean| <= mean_band and d(u0, 0) <= radius.

    Member ``i`` draws from its own child of ``SeedSequence(seed)``, so the
    ensemble is reproducible and independent of evaluation order.
    """
    zero = grid.constant(0.0)
    members = []
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.count)
    edge = 0.98
    for child in children:
        rng = np.random.default_rng(child)
        mean = rng.uniform(-cfg.mean_band, cfg.mean_band)
        if spec.singular:
            mean = float(np.clip(mean, -edge * 0.5, edge * 0.5))
        profile = _random_profile(grid, rng, cfg.modes)
        base = grid.constant(mean)
        if _distance(base, zero, spec, cfg.metric) > cfg.radius:
            raise RadiusInfeasible(f"a constant state with mean {mean:.3g} already lies outside radius "
                                   f"{cfg.radius}")
        target = rng.uniform(0.5, 1.0) * cfg.radius
        hi = 1.0
        if spec.singular:
            hi = (edge - abs(mean)) / max(np.max(np.abs(profile)), 1e-300)
        else:
            while _distance(base + hi * profile, zero, spec, cfg.metric) < target and hi < 1e6:
                hi *= 2.0
        lo = 0.0
        if _distance(base + hi * profile, zero, spec, cfg.metric) <= target:
            lo = hi
        for _ in range(100):
            if hi - lo <= 1e-12 * max(hi, 1.0):
                break
            mid = 0.5 * (lo + hi)
            if _distance(base + mid * profile, zero, spec, cfg.metric) <= target:
                lo = mid
            else:
                hi = mid
        members.append(base + lo * profile)
    return members


def _run_member(args):
    u0, cfg, mob, reg = args
    u0 = prepare_initial(u0, cfg, reg)
    return run(u0, cfg, mob, reg)


def worker_count() -> int:
    env = os.environ.get("MOBCH_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_ensemble(cfg: EnsembleConfig, grid: Grid, spec: PotentialSpec, mob: MobilitySpec,
                 base: SimConfig | None = None, workers: int | None = None,
                 initial: list[GridFunction] | None = None) -> list[Trajectory]:
    """Run every member to the last sample time; results keep member order.

    The snapshot cadence of ``base`` must hit every sample time.
    """
    base = base or cfg.base
    sim = replace(base, t_end=max(cfg.sample_times))
    stride = sim.dt * sim.snapshot_every
    for t in cfg.sample_times:
        if abs(t / stride - round(t / stride)) > 1e-9:
            raise MismatchedSampling(f"sample time {t} is not on the snapshot cadence {stride}")
    reg = RegularizedPotential(spec, sim.yosida_n)
    if initial is None:
        initial = generate_ensemble(cfg, spec, grid)
    jobs = [(u0, sim, mob, reg) for u0 in initial]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        return [_run_member(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_member, jobs))


def steady_state_residual(state: StepState, mob: MobilitySpec) -> float:
    """<B_u w, w>^(1/2), the mobility-weighted gradient norm of the chemical potential."""
    u, w = state.u, state.w
    bw = mobility_operator_apply(u.grid, mob(u.flat), w.flat)
    return math.sqrt(max(u.grid.cell_volume * float(np.dot(bw, w.flat)), 0.0))


def covering_number(dist: np.ndarray, rho: float) -> int:
    """Size of a greedy rho-net for a symmetric distance matrix."""
    uncovered = np.ones(dist.shape[0], dtype=bool)
    centers = 0
    while uncovered.any():
        i = int(np.flatnonzero(uncovered)[0])
        uncovered &= dist[i] > rho
        centers += 1
    return centers


@dataclass(frozen=True)
class CompactnessRow:
    t: float
    rho: float
    covering_number: int
    diameter: float
    max_residual: float


@dataclass
class CompactnessReport:
    sample_times: tuple[float, ...]
    rhos: tuple[float, ...]
    covering: dict[float, list[int]]
    diameters: list[float]
    max_residuals: list[float]
    initial_diameter: float
    distances: dict[float, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def compactness_evidence(self) -> bool:
        return self.diameters[-1] <= self.diameters[0]

    def rows(self) -> list[CompactnessRow]:
        out = []
        for k, t in enumerate(self.sample_times):
            for rho in self.rhos:
                out.append(CompactnessRow(t, rho, self.covering[t][self.rhos.index(rho)],
                                          self.diameters[k], self.max_residuals[k]))
        return out


def pairwise_distances(states: list[GridFunction], spec: PotentialSpec, metric: str = "V") -> np.ndarray:
    n = len(states)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = _distance(states[i], states[j], spec, metric)
    return d


def _state_at(traj: Trajectory, t: float) -> StepState:
    times = traj.times
    hits = np.flatnonzero(np.isclose(times, t, rtol=0, atol=1e-9 * max(1.0, t)))
    if hits.size == 0:
        raise MismatchedSampling(f"trajectory has no snapshot at t = {t}")
    return traj.states[int(hits[0])]


def compactness_probe(trajs: list[Trajectory], cfg: EnsembleConfig, spec: PotentialSpec,
                      mob: MobilitySpec) -> CompactnessReport:
    """Covering numbers, diameters and steady-state residuals at each sample time.

    Radii are the ladder ``cfg.rho_ladder`` scaled by the diameter of the
    initial ensemble; covering numbers are made nonincreasing in the radius
    (a net at a smaller radius is also a net at a larger one).
    """
    initial = [t.states[0].u for t in trajs]
    d0 = pairwise_distances(initial, spec, cfg.metric)
    diam0 = float(d0.max()) if d0.size else 0.0
    rhos = tuple(float(r) for r in cfg.rho_ladder)
    order = np.argsort(rhos)
    covering, diameters, residuals, dists = {}, [], [], {}
    for t in cfg.sample_times:
        states = [_state_at(tr, t) for tr in trajs]
        d = pairwise_distances([s.u for s in states], spec, cfg.metric)
        counts = np.array([covering_number(d, r * diam0) for r in rhos])
        best = counts.copy()
        running = math.inf
        for idx in order:
            running = min(running, counts[idx])
            best[idx] = running
        covering[t] = [int(c) for c in best]
        diameters.append(float(d.max()) if d.size else 0.0)
        residuals.append(max(steady_state_residual(s, mob) for s in states))
        dists[t] = d
    return CompactnessReport(tuple(cfg.sample_times), rhos, covering, diameters, residuals, diam0, dists)
