"""Convex-splitting implicit Euler for the regularized Cahn-Hilliard system.

One step solves, with the mobility frozen at the previous state ``u``,

    (u+ - u)/dt + B_u w+ = 0
    w+ = eps (u+ - u)/dt + B u+ + beta_n(u+) - lam u + f

by Newton's method on the reduced equation in ``u+`` alone.  The final
update is written in flux form, ``u+ = u - dt B_u w+``, so the mean of ``u``
is conserved to roundoff.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from .errors import ConvergenceFailure, MeanBoundViolation, NewtonDivergence
from .grid import Grid, GridFunction, MobilitySpec, cell_norm, elliptic_mollify, norms
from .potentials import RegularizedPotential

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    epsilon: float = 0.0
    yosida_n: float = 10_000
    dt: float = 1e-3
    t_end: float = 1.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    m: float = 0.9
    snapshot_every: int = 1
    f: GridFunction | float = 0.0
    # with epsilon = 0, use epsilon_n = 1/n in the regularized problem
    vanishing_viscosity: bool = True

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon >= 0 required")
        if not self.dt > 0:
            raise ValueError("dt > 0 required")
        if not self.t_end >= 0:
            raise ValueError("t_end >= 0 required")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol > 0 required")
        if not self.m > 0:
            raise ValueError("m > 0 required")
        if self.yosida_n <= 0:
            raise ValueError("yosida_n must be positive")
        if self.snapshot_every < 1 or self.newton_max_iter < 1:
            raise ValueError("snapshot_every and newton_max_iter must be positive integers")

    @property
    def effective_epsilon(self) -> float:
        if self.epsilon == 0 and self.vanishing_viscosity:
            return 1.0 / self.yosida_n
        return self.epsilon

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.dt + 1e-9))

    def source(self, grid: Grid) -> np.ndarray:
        if isinstance(self.f, GridFunction):
            return self.f.flat
        return np.full(grid.size, float(self.f))


@dataclass(frozen=True)
class StepState:
    u: GridFunction
    w: GridFunction
    t: float
    step_index: int
    newton_iters: int = 0


@dataclass
class Trajectory:
    states: list[StepState]
    config: SimConfig
    initial_energy: float
    # regularized energy after every step (index 0 is the initial state), when recorded
    step_energy_n: np.ndarray | None = None
    max_mass_drift: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def grid(self) -> Grid:
        return self.states[0].u.grid


def check_initial(u0: GridFunction, cfg: SimConfig, reg: RegularizedPotential | None = None):
    mean = float(np.mean(u0.flat))
    if reg is not None and reg.base.singular:
        if cfg.m >= 1:
            raise MeanBoundViolation("singular potentials need m < 1")
        reg.base.check_domain(u0.flat)
    if abs(mean) > cfg.m * (1 + 1e-14):
        raise MeanBoundViolation(f"|mean(u0)| = {abs(mean)!r} exceeds m = {cfg.m}")


def energy_terms(u: np.ndarray, grid: Grid, potential_values: np.ndarray, f: np.ndarray) -> float:
    dv = grid.cell_volume
    return float(0.5 * dv * np.dot(grid.laplacian @ u, u) + dv * np.sum(potential_values)
                 + dv * np.dot(f, u))


def prepare_initial(u0_raw: GridFunction, cfg: SimConfig,
                    reg: RegularizedPotential | None = None) -> GridFunction:
    """Mollify raw initial data by (I + B/n)^{-1} with n = ``cfg.yosida_n``.

    With ``reg`` given, also checks the domain and that the regularized energy
    of the result stays below the energy of the raw data plus the vanishing
    slack ``lam/2 (||u0||^2 - ||u0n||^2) + |<f, u0n - u0>|``.
    """
    check_initial(u0_raw, cfg, reg)
    out = elliptic_mollify(u0_raw, cfg.yosida_n)
    nin, nout = norms(u0_raw), norms(out)
    slack = 1e-10 * max(1.0, nin.h1)
    if nout.h1 > nin.h1 + slack:
        raise AssertionError("mollified data has larger V-norm")
    if cell_norm(out.grid, out.flat - u0_raw.flat) > cfg.yosida_n**-0.5 * nin.h1 + slack:
        raise AssertionError("mollified data is too far from the raw data")
    if reg is not None:
        grid = u0_raw.grid
        f = cfg.source(grid)
        e_raw = energy_terms(u0_raw.flat, grid, reg.base.value(u0_raw.flat), f)
        e_out = energy_terms(out.flat, grid, reg.value(out.flat), f)
        sigma = (0.5 * reg.lam * (nin.l2**2 - nout.l2**2)
                 + abs(grid.cell_volume * float(np.dot(f, out.flat - u0_raw.flat))))
        if e_out > e_raw + sigma + 1e-10 * max(1.0, abs(e_raw)):
            raise AssertionError("regularized energy of mollified data exceeds the raw energy bound")
    return out


class Stepper:
    """Reusable one-step solver for a fixed configuration."""

    def __init__(self, grid: Grid, cfg: SimConfig, mob: MobilitySpec, reg: RegularizedPotential,
                 face: str = "arithmetic"):
        self.grid = grid
        self.cfg = cfg
        self.mob = mob
        self.reg = reg
        self.face = face
        self.L = grid.laplacian
        self.f = cfg.source(grid)
        self.eps = cfg.effective_epsilon
        self.eye = sp.identity(grid.size, format="csr")
        self._inv_h2 = 1.0 / grid.h**2

    def chemical_potential(self, x, u, bn=None):
        if bn is None:
            bn = self.reg.beta_n(x)
        return self.eps / self.cfg.dt * (x - u) + self._lap(x) + bn - self.reg.lam * u + self.f

    def _lap(self, x):
        if self.grid.dim == 1:
            return _flux_divergence(self._inv_h2, x)
        D = self.grid.difference
        return D.T @ (D @ x) * self._inv_h2

    def initial_state(self, u0: GridFunction) -> StepState:
        x = u0.flat
        w = self._lap(x) + self.reg.beta_n(x) - self.reg.lam * x + self.f
        return StepState(u0, u0.with_values(w), 0.0, 0, 0)

    def _operators(self, u):
        """Return (apply_dtA, solve) for the frozen mobility b(u).

        ``solve(c, rhs)`` solves (I + eps A + dt A (L + diag(c))) x = rhs.
        1D grids use pentadiagonal banded solves; 2D grids sparse LU.
        """
        dt = self.cfg.dt
        b = self.mob(u)
        if self.grid.dim == 1:
            h2 = self.grid.h**2
            bf = 0.5 * (b[1:] + b[:-1]) if self.face == "arithmetic" else 2 * b[1:] * b[:-1] / (b[1:] + b[:-1])
            cf = bf * (dt / h2)
            a_low, a_diag, a_up = _tridiag_from_faces(cf)
            l_low, l_diag, l_up = self._lap_bands

            def apply(w):
                return _flux_divergence(cf, w)

            def solve(c, rhs):
                d2 = l_diag + self.eps / dt + c
                ab = _tridiag_product(a_low, a_diag, a_up, l_low, d2, l_up)
                ab[2] += 1.0
                return solve_banded((2, 2), ab, rhs)

            return apply, solve
        A = self.grid.mobility_operator(b, self.face)
        dtA = (dt * A).tocsr()
        K = (self.eye + self.eps * A + dtA @ self.L).tocsr()
        D = self.grid.difference
        cf = dt * self._inv_h2 * _face_values(D, b, self.face)

        def apply(w):
            # flux form: constants give exactly zero differences
            return D.T @ (cf * (D @ w))

        def solve(c, rhs):
            return spsolve((K + dtA.multiply(c[np.newaxis, :])).tocsc(), rhs)

        return apply, solve

    @property
    def _lap_bands(self):
        if not hasattr(self, "_lap_cache"):
            n = self.grid.n_cells
            self._lap_cache = _tridiag_from_faces(np.full(n - 1, 1.0 / self.grid.h**2))
        return self._lap_cache

    def step(self, state: StepState) -> StepState:
        cfg = self.cfg
        u = state.u.flat
        apply_dtA, solve = self._operators(u)

        def residual(x):
            _, bn, dbn = self.reg.evaluate(x)
            w = self.chemical_potential(x, u, bn)
            return x - u + apply_dtA(w), w, dbn

        x = u.copy()
        F, w, dbn = residual(x)
        res = cell_norm(self.grid, F)
        iters = 0
        while res > cfg.newton_tol or iters == 0:
            if iters >= cfg.newton_max_iter:
                raise NewtonDivergence(
                    f"Newton did not reach {cfg.newton_tol:.1e} in {iters} iterations "
                    f"(residual {res:.3e}); try halving dt", state.step_index + 1)
            iters += 1
            delta = solve(dbn, -F)
            if not np.all(np.isfinite(delta)):
                raise NewtonDivergence("singular Newton system", state.step_index + 1)
            accepted = False
            for damping in (1.0, 0.5, 0.25, 0.125):
                xt = x + damping * delta
                Ft, wt, dbt = residual(xt)
                rt = cell_norm(self.grid, Ft)
                if rt < res or rt <= cfg.newton_tol:
                    accepted = True
                    break
            if not accepted:
                # stagnation: stabilized Picard step with the largest local slope
                xt = x + solve(np.full_like(dbn, np.max(dbn)), -F)
                Ft, wt, dbt = residual(xt)
                rt = cell_norm(self.grid, Ft)
                if not np.isfinite(rt) or rt >= res:
                    raise NewtonDivergence(
                        f"Newton stagnated at residual {res:.3e}", state.step_index + 1)
            x, F, w, dbn, res = xt, Ft, wt, dbt, rt
        u_new = u - apply_dtA(w)
        return StepState(state.u.with_values(u_new), state.w.with_values(w),
                         (state.step_index + 1) * cfg.dt, state.step_index + 1, iters)

    def energy_n(self, x) -> float:
        return energy_terms(x, self.grid, self.reg.value(x), self.f)


def _face_values(D, b, face):
    left = D.maximum(0) @ b
    right = (-D).maximum(0) @ b
    if face == "arithmetic":
        return 0.5 * (left + right)
    return 2.0 * left * right / (left + right)


def _flux_divergence(c, w):
    """D^T (c * D w) in 1D: minus the divergence of the face fluxes."""
    flux = c * (w[1:] - w[:-1])
    out = np.zeros_like(w)
    out[:-1] -= flux
    out[1:] += flux
    return out


def _tridiag_from_faces(c):
    """Bands (lower, diag, upper) of D^T diag(c) D for face weights ``c``."""
    n = c.size + 1
    low = np.zeros(n)
    up = np.zeros(n)
    diag = np.zeros(n)
    low[1:] = -c
    up[:-1] = -c
    diag[:-1] += c
    diag[1:] += c
    return low, diag, up


def _tridiag_product(l1, d1, u1, l2, d2, u2):
    """Banded storage (for ``solve_banded((2, 2), ...)``) of T1 @ T2.

    ``l[i] = T[i, i-1]`` and ``u[i] = T[i, i+1]``; out-of-range entries are zero.
    """
    n = d1.size
    ab = np.zeros((5, n))
    # row r of ab holds entries P[j - 2 + r, j]
    ab[0, 2:] = u1[:-2] * u2[1:-1]
    ab[1, 1:] = d1[:-1] * u2[:-1] + u1[:-1] * d2[1:]
    ab[2] = d1 * d2
    ab[2, 1:] += l1[1:] * u2[:-1]
    ab[2, :-1] += u1[:-1] * l2[1:]
    ab[3, :-1] = l1[1:] * d2[:-1] + d1[1:] * l2[1:]
    ab[4, :-2] = l1[2:] * l2[1:-1]
    return ab


def step(state: StepState, cfg: SimConfig, mob: MobilitySpec, reg: RegularizedPotential) -> StepState:
    return Stepper(state.u.grid, cfg, mob, reg).step(state)


def run(u0: GridFunction, cfg: SimConfig, mob: MobilitySpec, reg: RegularizedPotential,
        record_energy: bool = False, face: str = "arithmetic") -> Trajectory:
    """Integrate from t = 0 to ``cfg.t_end``, keeping every ``snapshot_every``-th state.

    ``u0`` is expected to be prepared already (see :func:`prepare_initial`).
    With ``record_energy`` the regularized energy after every step is stored
    in ``Trajectory.step_energy_n``.
    """
    check_initial(u0, cfg, reg)
    stepper = Stepper(u0.grid, cfg, mob, reg, face)
    state = stepper.initial_state(u0)
    states = [state]
    energies = [stepper.energy_n(u0.flat)] if record_energy else None
    mass0 = float(np.mean(u0.flat))
    drift = 0.0
    for k in range(1, cfg.n_steps + 1):
        try:
            state = stepper.step(state)
        except ConvergenceFailure as exc:
            raise ConvergenceFailure(f"step {k}: {exc}") from exc
        drift = max(drift, abs(float(np.mean(state.u.flat)) - mass0))
        if record_energy:
            energies.append(stepper.energy_n(state.u.flat))
        if k % cfg.snapshot_every == 0:
            states.append(state)
    scale = max(1.0, norms(u0).l2 / math.sqrt(u0.grid.volume))
    if drift > 1e-10 * scale:
        log.warning("mass drift %.3e exceeds 1e-10 relative", drift)
    e0 = energy_terms(u0.flat, u0.grid, reg.value(u0.flat), stepper.f)
    return Trajectory(states, cfg, e0, None if energies is None else np.array(energies), drift)


def with_config(cfg: SimConfig, **changes) -> SimConfig:
    return replace(cfg, **changes)
