"""Shared scenarios.  Expensive ensemble runs are computed once per session."""

import numpy as np
import pytest

from mobch.attractor import EnsembleConfig, run_ensemble
from mobch.grid import Grid, MobilitySpec
from mobch.potentials import DoubleWellQuartic, RegularizedPotential
from mobch.timestepper import SimConfig, prepare_initial, run

# ensemble scenario: only the first cosine mode is unstable on a box of length 5,
# so members relax to single interfaces within the sampled window
ENSEMBLE_EXTENT = 5.0
ENSEMBLE_CELLS = 64
ENSEMBLE_DT = 0.01
ENSEMBLE_MEAN_BAND = 0.25
ENSEMBLE_COUNT = 20
ENSEMBLE_RADIUS = 2.0


def multimode_profile(grid):
    x, = grid.centers()
    L = grid.extent
    return grid.function(0.1 * np.cos(4 * np.pi * x / L) + 0.05 * np.cos(6 * np.pi * x / L))


@pytest.fixture(scope="session")
def double_well():
    return DoubleWellQuartic()


@pytest.fixture(scope="session")
def sine_mobility():
    return MobilitySpec.sine(2.0, 1.0)


@pytest.fixture(scope="session")
def ensemble_grid():
    return Grid(1, ENSEMBLE_CELLS, ENSEMBLE_EXTENT)


def _ensemble(grid, spec, mob, eps, t_end):
    base = SimConfig(dt=ENSEMBLE_DT, epsilon=eps, snapshot_every=10, m=ENSEMBLE_MEAN_BAND)
    times = (10.0, 20.0, 40.0) if t_end == 40.0 else (t_end,)
    cfg = EnsembleConfig(count=ENSEMBLE_COUNT, radius=ENSEMBLE_RADIUS,
                         mean_band=ENSEMBLE_MEAN_BAND, seed=0, sample_times=times, base=base)
    return cfg, run_ensemble(cfg, grid, spec, mob)


@pytest.fixture(scope="session")
def ensemble_eps0(ensemble_grid, double_well, sine_mobility):
    """Twenty members with epsilon = 0, run to t = 40."""
    return _ensemble(ensemble_grid, double_well, sine_mobility, 0.0, 40.0)


@pytest.fixture(scope="session")
def ensemble_eps2(ensemble_grid, double_well, sine_mobility):
    """The same initial data with epsilon = 1e-2, run to t = 20."""
    return _ensemble(ensemble_grid, double_well, sine_mobility, 1e-2, 20.0)


@pytest.fixture(scope="session")
def spinodal_trajectory(ensemble_grid, double_well, sine_mobility):
    """Small first-mode perturbation of the unstable constant state, run to t = 20."""
    g = ensemble_grid
    x, = g.centers()
    cfg = SimConfig(dt=ENSEMBLE_DT, t_end=20.0, snapshot_every=1, m=ENSEMBLE_MEAN_BAND)
    reg = RegularizedPotential(double_well, cfg.yosida_n)
    u0 = prepare_initial(g.function(0.01 * np.cos(np.pi * x / g.extent)), cfg, reg)
    return run(u0, cfg, sine_mobility, reg)
