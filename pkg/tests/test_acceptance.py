"""Acceptance suite: one test per criterion, at the stated tolerances."""

import time

import numpy as np
import pytest

from mobch.attractor import compactness_probe, covering_number, steady_state_residual
from mobch.diagnostics import (EnergySeries, energy_equality_residual, energy_report,
                               entropy_dissipation_check, fit_dissipativity, propmu_bracket,
                               regularization_distances, regularization_window_scan,
                               window_in_reach)
from mobch.grid import Grid, MobilitySpec, elliptic_mollify, norms
from mobch.potentials import (DoubleWellQuartic, Logarithmic, PolynomialGrowth,
                              RegularizedPotential)
from mobch.timestepper import SimConfig, prepare_initial, run

SINE = MobilitySpec.sine(2.0, 1.0)
DW = DoubleWellQuartic()

# single-trajectory scenario for criteria 1 to 3
LONG_EXTENT = 16.0
LONG_CELLS = 256


def long_initial(grid):
    x, = grid.centers()
    L = grid.extent
    return grid.function(0.1 + 0.3 * np.cos(np.pi * x / L) + 0.2 * np.cos(3 * np.pi * x / L))


def long_run(dt, t_end, f=0.0, record_energy=False, snapshot_every=None):
    grid = Grid(1, LONG_CELLS, LONG_EXTENT)
    every = snapshot_every or int(round(t_end / dt))
    cfg = SimConfig(dt=dt, t_end=t_end, f=f, snapshot_every=every)
    reg = RegularizedPotential(DW, cfg.yosida_n)
    u0 = prepare_initial(long_initial(grid), cfg, reg)
    return run(u0, cfg, SINE, reg, record_energy=record_energy), reg


@pytest.fixture(scope="module")
def dissipation_runs():
    runs, elapsed = {}, {}
    for f in (0.0, 0.1):
        start = time.perf_counter()
        runs[f] = long_run(1e-4, 1.0, f=f, record_energy=True)[0]
        elapsed[f] = time.perf_counter() - start
    return runs, elapsed


def test_criterion_01_mass_conservation(dissipation_runs):
    runs, elapsed = dissipation_runs
    traj = runs[0.0]
    assert traj.states[-1].step_index == 10_000
    mean0 = abs(float(np.mean(traj.states[0].u.values)))
    assert traj.max_mass_drift <= 1e-10 * mean0
    assert elapsed[0.0] < 30.0


def test_criterion_02_energy_dissipation(dissipation_runs):
    runs, _ = dissipation_runs
    for f, traj in runs.items():
        increases = np.diff(traj.step_energy_n)
        assert increases.size == 10_000
        assert int(np.sum(increases > 1e-9)) == 0, f


def test_criterion_03_energy_equality_order():
    residuals = []
    for dt in (4e-4, 2e-4, 1e-4):
        traj, reg = long_run(dt, 0.5, snapshot_every=1)
        residuals.append(energy_equality_residual(traj, SINE, reg, 0.0, 0.5))
    ratios = [residuals[0] / residuals[1], residuals[1] / residuals[2]]
    assert all(1.7 <= r <= 2.3 for r in ratios), ratios


def test_criterion_04_yosida_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    specs = (DW, PolynomialGrowth(p=3.0), PolynomialGrowth(p=6.0), Logarithmic(lambda_log=2.0))
    for spec in specs:
        for n in (1.0, 1e2, 1e4):
            reg = RegularizedPotential(spec, n)
            a, b = rng.uniform(-3, 3, (2, 10_000))
            gap = np.abs(reg.resolvent(a) - reg.resolvent(b))
            assert np.all(gap <= np.abs(a - b) + 1e-12)
            r = spec.sample_points(2001)
            assert np.all(np.abs(reg.beta_n(r)) <= np.abs(spec.beta(r)) + 1e-12)
            assert np.all(reg.value(r) <= spec.value(r) + 1e-10)
        r = spec.sample_points(201)
        seq = np.array([RegularizedPotential(spec, n).beta_n(r) for n in (1, 10, 1e2, 1e3, 1e4, 1e5)])
        # |beta_n| increases towards |beta| as n grows
        assert np.all(np.diff(np.abs(seq), axis=0) >= -1e-12)
        assert np.all(np.abs(seq[-1] - spec.beta(r)) <= np.abs(seq[0] - spec.beta(r)) + 1e-12)
    # cubic beta at n = 1: v + v^3 = 2 has the root v = 1
    assert RegularizedPotential(DW, 1.0).beta_n(2.0) == pytest.approx(1.0, abs=1e-14)
    assert time.perf_counter() - start < 5.0


def test_criterion_05_mollifier_bounds():
    rng = np.random.default_rng(5)
    grid = Grid(1, 128, 4.0)
    x, = grid.centers()
    k = np.arange(1, 33)
    basis = np.cos(np.pi * np.outer(x, k) / grid.extent)
    for _ in range(50):
        u0 = grid.function(rng.uniform(-0.5, 0.5) + basis @ (rng.standard_normal(k.size) / k))
        v0 = norms(u0).h1
        for n in (1e2, 1e4):
            un = elliptic_mollify(u0, n)
            assert norms(un).h1 <= v0 + 1e-10
            assert norms(un - u0).l2 <= n**-0.5 * v0 + 1e-10


def test_criterion_06_entropy_bracket():
    s = np.random.default_rng(6).uniform(-5, 5, 1000)
    lo, mid, hi = propmu_bracket(s, SINE)
    assert np.all(lo - 1e-8 <= mid) and np.all(mid <= hi + 1e-8)


def _energy_series(trajs, t_max):
    out = []
    for traj in trajs:
        rep = energy_report(traj, SINE, RegularizedPotential(DW, traj.config.yosida_n))
        keep = rep.times <= t_max + 1e-9
        out.append(EnergySeries(rep.times[keep], rep.energy[keep], rep.energy[0]))
    return out


def test_criterion_07_ensemble_dissipativity(ensemble_eps0, ensemble_eps2):
    series = _energy_series(ensemble_eps0[1], 20.0) + _energy_series(ensemble_eps2[1], 20.0)
    assert len(series) == 40
    fit = fit_dissipativity(series)
    assert fit.valid and fit.margin >= 0


def test_criterion_08_entropy_dissipation(ensemble_eps0, ensemble_eps2):
    spec = PolynomialGrowth(p=4.0, eta=3.0, lam=1.0)
    # the ensemble dynamics only see beta, which coincides with the double-well one
    r = np.linspace(-3, 3, 601)
    np.testing.assert_allclose(spec.beta(r), DW.beta(r), rtol=1e-14, atol=1e-14)
    trajs = list(ensemble_eps0[1]) + list(ensemble_eps2[1])
    check = entropy_dissipation_check(trajs, SINE, spec)
    assert check.lhs.size > 0
    assert check.violations == 0


def test_criterion_09_regularization_windows(ensemble_eps0, ensemble_eps2, spinodal_trajectory):
    reg = RegularizedPotential(DW, spinodal_trajectory.config.yosida_n)
    c_bound = 0.0
    for traj in list(ensemble_eps0[1]) + list(ensemble_eps2[1]):
        late = traj.times >= 5.0
        c_bound = max(c_bound, float(regularization_distances(traj, DW, reg)[late].max()))
    windows = regularization_window_scan(spinodal_trajectory, DW, c_bound, 0.1, reg=reg)
    missing = [T for T in range(5, 19) if not window_in_reach(windows, T, 0.1, reach=1.5)]
    assert missing == []


def test_criterion_10_compactness(ensemble_eps0):
    cfg, trajs = ensemble_eps0
    report = compactness_probe(trajs, cfg, DW, SINE)
    assert report.sample_times == (10.0, 20.0, 40.0)
    counts = [covering_number(report.distances[t], 0.1) for t in report.sample_times]
    residuals = [steady_state_residual(tr.states[-1], SINE) for tr in trajs]
    failures = []
    if not report.diameters[-1] <= report.diameters[0]:
        failures.append(f"diameter grew: {report.diameters[0]!r} -> {report.diameters[-1]!r}")
    if any(b > a for a, b in zip(counts, counts[1:])):
        failures.append(f"covering numbers at rho = 0.1 increased: {counts}")
    if max(residuals) > 1e-5:
        failures.append(f"steady-state residual {max(residuals):.3e} > 1e-5")
    assert not failures, "; ".join(failures)


@pytest.mark.parametrize("eps", [0.0, 1e-2])
def test_criterion_11_constant_steady_state(eps):
    for grid in (Grid(1, 256, 16.0), Grid(2, 16, 2.0)):
        for c in (-0.6, 0.0, 0.3):
            cfg = SimConfig(dt=0.01, t_end=1.0, epsilon=eps)
            reg = RegularizedPotential(DW, cfg.yosida_n)
            traj = run(grid.constant(c), cfg, SINE, reg)
            assert len(traj.states) == 101
            for s in traj.states:
                assert np.max(np.abs(s.u.values - c)) <= 1e-12
