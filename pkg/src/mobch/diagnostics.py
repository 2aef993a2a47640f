"""Energies, dissipation balances, entropy estimates and regularization windows.

Everything here is evaluated on snapshots of a :class:`~mobch.timestepper.Trajectory`
and is a pure function of its inputs.
"""

from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import NoValidFit, TimesNotInTrajectory, WrongPotentialClass
from .grid import GridFunction, MobilitySpec, dist_W, norms
from .potentials import PolynomialGrowth, PotentialSpec, RegularizedPotential
from .timestepper import Trajectory, energy_terms

ENTROPY_TOL = 1e-10
_NODE_SPACING = 0.25
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _source(f, grid):
    if f is None:
        return np.zeros(grid.size)
    if isinstance(f, GridFunction):
        return f.flat
    return np.full(grid.size, float(f))


def energy(u: GridFunction, spec: PotentialSpec, f=None) -> float:
    """Cell quadrature of |grad u|^2/2 + W(u) + f u."""
    return energy_terms(u.flat, u.grid, spec.value(u.flat), _source(f, u.grid))


def energy_n(u: GridFunction, reg: RegularizedPotential, f=None) -> float:
    """Same as :func:`energy` with the regularized potential W_n."""
    return energy_terms(u.flat, u.grid, reg.value(u.flat), _source(f, u.grid))


def mobility_dissipation(u: GridFunction, w: GridFunction, mob: MobilitySpec) -> float:
    """<B_u w, w> = integral of b(u) |grad w|^2 with arithmetic face mobilities."""
    grid = u.grid
    dw = grid.difference @ w.flat
    bf = grid.face_average @ mob(u.flat)
    return float(grid.cell_volume * np.sum(bf * dw * dw) / grid.h**2)


def _snapshot_index(times, t):
    hits = np.flatnonzero(np.isclose(times, t, rtol=0, atol=1e-9 * max(1.0, abs(t))))
    if hits.size == 0:
        raise TimesNotInTrajectory(f"time {t!r} is not a snapshot time")
    return int(hits[0])


def _time_derivative_norms(us: np.ndarray, times: np.ndarray, cell_volume: float) -> np.ndarray:
    if len(times) < 2:
        return np.zeros(len(times))
    ut = np.gradient(us, times, axis=0, edge_order=1)
    return cell_volume * np.sum(ut * ut, axis=1)


def energy_equality_residual(traj: Trajectory, mob: MobilitySpec, reg: RegularizedPotential,
                             t1: float, t2: float) -> float:
    """Defect of E_n(t2) - E_n(t1) + int int b(u)|grad w|^2 + eps int ||u_t||^2 = 0.

    Time integrals use the trapezoid rule on the snapshots inside [t1, t2];
    ``u_t`` comes from centred snapshot differences (one-sided at the ends).
    """
    times = traj.times
    i1, i2 = _snapshot_index(times, t1), _snapshot_index(times, t2)
    if i2 < i1:
        raise TimesNotInTrajectory("t1 must not exceed t2")
    if i1 == i2:
        return 0.0
    window = traj.states[i1:i2 + 1]
    tw = times[i1:i2 + 1]
    grid = traj.grid
    f = traj.config.source(grid)
    e1 = energy_terms(window[0].u.flat, grid, reg.value(window[0].u.flat), f)
    e2 = energy_terms(window[-1].u.flat, grid, reg.value(window[-1].u.flat), f)
    diss = np.array([mobility_dissipation(s.u, s.w, mob) for s in window])
    total = e2 - e1 + np.trapezoid(diss, tw)
    eps = traj.config.effective_epsilon
    if eps > 0:
        us = np.array([s.u.flat for s in window])
        total += eps * np.trapezoid(_time_derivative_norms(us, tw, grid.cell_volume), tw)
    return abs(float(total))


@dataclass(frozen=True)
class EnergyReport:
    times: np.ndarray
    energy: np.ndarray
    energy_n: np.ndarray
    dissipation: np.ndarray
    visc_dissipation: np.ndarray
    mass: np.ndarray
    entropy: np.ndarray
    h2: np.ndarray
    residual_energy_eq: np.ndarray


def energy_report(traj: Trajectory, mob: MobilitySpec, reg: RegularizedPotential) -> EnergyReport:
    """Per-snapshot series; cumulative integrals start at the first snapshot."""
    grid = traj.grid
    spec = reg.base
    f = traj.config.source(grid)
    times = traj.times
    us = np.array([s.u.flat for s in traj.states])
    e, en = [], []
    for x in us:
        en.append(energy_terms(x, grid, reg.value(x), f))
        if spec.singular and np.any(np.abs(x) >= 1):
            e.append(math.nan)
        else:
            e.append(energy_terms(x, grid, spec.value(x), f))
    diss_rate = np.array([mobility_dissipation(s.u, s.w, mob) for s in traj.states])
    diss = _cumtrapz(diss_rate, times)
    eps = traj.config.effective_epsilon
    visc = eps * _cumtrapz(_time_derivative_norms(us, times, grid.cell_volume), times)
    en = np.array(en)
    return EnergyReport(
        times=times,
        energy=np.array(e),
        energy_n=en,
        dissipation=diss,
        visc_dissipation=visc,
        mass=us.mean(axis=1),
        entropy=np.array([entropy_functional(s.u, mob) for s in traj.states]),
        h2=np.array([norms(s.u).h2_discrete for s in traj.states]),
        residual_energy_eq=en - en[0] + diss + visc,
    )


def _cumtrapz(y, t):
    out = np.zeros(len(t))
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


@dataclass(frozen=True)
class DissipativityFit:
    kappa: float
    c0: float
    margin: float

    @property
    def valid(self) -> bool:
        return self.kappa > 0 and self.margin >= 0


class EnergySeries(NamedTuple):
    times: np.ndarray
    energy: np.ndarray
    e0: float


def dissipativity_margin(series: Sequence[EnergySeries], kappa: float, c0: float) -> float:
    """Worst slack of E(t) <= e0 exp(-kappa t) + c0 over all series."""
    worst = math.inf
    for s in series:
        t, e = np.asarray(s.times), np.asarray(s.energy)
        worst = min(worst, float(np.min(s.e0 * np.exp(-kappa * t) + c0 - e)))
    return worst


def fit_dissipativity(series: Sequence[EnergySeries], kappas=None, c0_max: float = math.inf,
                      c0_floor: float = 1e-12) -> DissipativityFit:
    """Find one (kappa, C0) bounding every series.

    For each decay rate on a logarithmic grid the smallest admissible ``C0``
    is the worst excess of the energy over the decaying initial energy; among
    these pairs the one with the smallest time-integrated bound wins.
    """
    if kappas is None:
        kappas = np.logspace(-3, 2, 201)
    best = None
    for kappa in kappas:
        c0 = c0_floor
        area = 0.0
        for s in series:
            t, e = np.asarray(s.times), np.asarray(s.energy)
            decay = s.e0 * np.exp(-kappa * t)
            c0 = max(c0, float(np.max(e - decay)))
            area += float(np.trapezoid(decay, t)) if len(t) > 1 else float(decay[0])
        if c0 > c0_max:
            continue
        span = sum((float(s.times[-1] - s.times[0]) if len(s.times) > 1 else 1.0) for s in series)
        area += c0 * span
        if best is None or area < best[0]:
            best = (area, float(kappa), c0)
    if best is None:
        raise NoValidFit(f"no decay rate admits C0 <= {c0_max!r}")
    _, kappa, c0 = best
    # a few ulps of headroom so re-evaluating the margin cannot round below zero
    top = max(abs(float(np.max(s.energy))) for s in series)
    c0 += 4.0 * float(np.spacing(max(abs(c0), top, 1.0)))
    return DissipativityFit(kappa, c0, dissipativity_margin(series, kappa, c0))


def dissipativity_fit(report: EnergyReport, e0: float, **kwargs) -> DissipativityFit:
    if len(report.times) == 0:
        raise NoValidFit("empty series")
    return fit_dissipativity([EnergySeries(report.times, report.energy, e0)], **kwargs)


def _adaptive_simpson(f, a, b, tol, depth=50):
    def simpson(fa, fm, fb, a, b):
        return (b - a) * (fa + 4 * fm + fb) / 6

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15 * tol:
            return left + right + (left + right - whole) / 15
        return (recurse(a, m, fa, flm, fm, left, tol / 2, depth - 1)
                + recurse(m, b, fm, frm, fb, right, tol / 2, depth - 1))

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)


class EntropyTable:
    """mu(s) = int_0^s dr / b(r) and mu_hat(s) = int_0^s mu(r) dr.

    Values at the breakpoints ``k * 0.25`` are computed once by adaptive
    Simpson quadrature and memoized; a value between breakpoints adds a
    10-point Gauss-Legendre rule on the remaining short interval.
    """

    def __init__(self, mob: MobilitySpec, tol: float = ENTROPY_TOL):
        self.mob = mob
        self.tol = tol
        self._lock = threading.Lock()
        self._mu = {0: 0.0}
        self._mu_hat = {0: 0.0}

    def _inv_b(self, r):
        return 1.0 / float(self.mob(r))

    def _ensure(self, k: int):
        step = 1 if k > 0 else -1
        with self._lock:
            j = 0
            while j != k:
                nxt = j + step
                if nxt not in self._mu:
                    a, b = j * _NODE_SPACING, nxt * _NODE_SPACING
                    d_mu = _adaptive_simpson(self._inv_b, a, b, self.tol)
                    d_hat = self._mu[j] * (b - a) + _adaptive_simpson(
                        lambda q: (b - q) / float(self.mob(q)), a, b, self.tol)
                    self._mu[nxt] = self._mu[j] + d_mu
                    self._mu_hat[nxt] = self._mu_hat[j] + d_hat
                j = nxt

    def _split(self, s):
        s = np.asarray(s, dtype=float)
        k = np.floor(s / _NODE_SPACING).astype(int)
        for kk in (int(k.min()), int(k.max())) if k.size else ():
            self._ensure(kk)
        a = k * _NODE_SPACING
        mu_a = np.array([self._mu[int(i)] for i in k.ravel()]).reshape(k.shape)
        hat_a = np.array([self._mu_hat[int(i)] for i in k.ravel()]).reshape(k.shape)
        return s, a, mu_a, hat_a

    def _gauss(self, a, s, weight):
        half = 0.5 * (s - a)
        q = a[..., None] + half[..., None] * (_GL_NODES + 1.0)
        vals = weight(q, s[..., None]) / self.mob(q)
        return half * np.sum(vals * _GL_WEIGHTS, axis=-1)

    def mu(self, s):
        s, a, mu_a, _ = self._split(s)
        return mu_a + self._gauss(a, s, lambda q, s_: np.ones_like(q))

    def mu_hat(self, s):
        s, a, mu_a, hat_a = self._split(s)
        return hat_a + mu_a * (s - a) + self._gauss(a, s, lambda q, s_: s_ - q)


@functools.lru_cache(maxsize=32)
def entropy_table(mob: MobilitySpec) -> EntropyTable:
    return EntropyTable(mob)


def entropy_functional(u: GridFunction, mob: MobilitySpec) -> float:
    """Cell quadrature of mu_hat(u)."""
    vals = entropy_table(mob).mu_hat(u.flat)
    return float(u.grid.cell_volume * np.sum(vals))


class EntropyCheck(NamedTuple):
    violations: int
    worst: float
    c6: float
    lhs: np.ndarray


def _gradient_weighted(u: GridFunction, p: float) -> float:
    """Face quadrature of |u|^(p-2) |grad u|^2."""
    grid = u.grid
    x = u.flat
    weight = grid.face_average @ (np.abs(x) ** (p - 2.0))
    du = grid.difference @ x
    return float(grid.cell_volume * np.sum(weight * du * du) / grid.h**2)


def entropy_lhs(traj: Trajectory, mob: MobilitySpec, spec: PotentialSpec) -> np.ndarray:
    """Interval averages of 2 d/dt int mu_hat(u) + ||u||_H2^2 / 2 + eta int |u|^(p-2) |grad u|^2."""
    _require_entropy_class(spec)
    times = traj.times
    if len(times) < 2:
        return np.zeros(0)
    ent = np.array([entropy_functional(s.u, mob) for s in traj.states])
    rest = np.array([0.5 * norms(s.u).h2_discrete ** 2 + spec.eta * _gradient_weighted(s.u, spec.p)
                     for s in traj.states])
    dt = np.diff(times)
    return 2.0 * np.diff(ent) / dt + 0.5 * (rest[1:] + rest[:-1])


def _require_entropy_class(spec):
    if not isinstance(spec, PolynomialGrowth) or spec.singular or not (2.0 < spec.p < 6.0):
        raise WrongPotentialClass("entropy estimate needs a polynomial potential with p in (2, 6)")


def entropy_dissipation_check(trajs, mob: MobilitySpec, spec: PotentialSpec,
                              c6: float | None = None) -> EntropyCheck:
    """Count intervals whose entropy left-hand side exceeds ``c6``.

    Without ``c6`` the smallest constant valid for every interval of every
    trajectory is used.  Passing a constant calibrated elsewhere turns this
    into a held-out check.
    """
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    lhs = np.concatenate([entropy_lhs(t, mob, spec) for t in trajs])
    if c6 is None:
        c6 = max(0.0, float(lhs.max())) if lhs.size else 0.0
    excess = lhs - c6
    return EntropyCheck(int(np.sum(excess > 0)), float(excess.max()) if lhs.size else -c6, c6, lhs)


class Window(NamedTuple):
    onset: float
    length: float


def regularization_distances(traj: Trajectory, spec: PotentialSpec,
                             reg: RegularizedPotential | None = None) -> np.ndarray:
    zero = traj.grid.constant(0.0)
    return np.array([dist_W(s.u, zero, spec, reg) for s in traj.states])


def regularization_window_scan(traj: Trajectory, spec: PotentialSpec, C_bound: float,
                               window: float, reg: RegularizedPotential | None = None,
                               distances: np.ndarray | None = None) -> list[Window]:
    """Maximal snapshot intervals with d_W(u(t), 0) <= C_bound lasting at least ``window``."""
    if distances is None:
        distances = regularization_distances(traj, spec, reg)
    times = traj.times
    inside = distances <= C_bound
    found = []
    k = 0
    while k < len(times):
        if not inside[k]:
            k += 1
            continue
        j = k
        while j + 1 < len(times) and inside[j + 1]:
            j += 1
        length = float(times[j] - times[k])
        if length >= window - 1e-12:
            found.append(Window(float(times[k]), length))
        k = j + 1
    return found


def window_in_reach(windows: Sequence[Window], T: float, length: float, reach: float = 1.5) -> bool:
    """True if some [a, a + length] with a in [T, T + reach] lies inside a window."""
    for w in windows:
        lo = max(T, w.onset)
        hi = min(T + reach, w.onset + w.length - length)
        if lo <= hi + 1e-12:
            return True
    return False


def propmu_bracket(s, mob: MobilitySpec):
    """Return (s^2 / mu_upper, 2 mu_hat(s), s^2 / alpha)."""
    s = np.asarray(s, dtype=float)
    return s * s / mob.mu_upper, 2.0 * entropy_table(mob).mu_hat(s), s * s / mob.alpha
