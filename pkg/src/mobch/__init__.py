"""Finite-difference Cahn-Hilliard dynamics with state-dependent mobility.

The package integrates the (possibly viscous) Cahn-Hilliard system with a
nondegenerate mobility ``b(u)`` and a regular or logarithmic potential, and
provides diagnostics for energy balance, dissipativity, entropy estimates and
attractor-like behaviour of trajectory ensembles.
"""

from .errors import MobchError, NewtonDivergence
from .grid import Grid, GridFunction, MobilitySpec
from .potentials import (DoubleWellQuartic, Logarithmic, PolynomialGrowth, PotentialSpec,
                         RegularizedPotential, make_potential)
from .timestepper import SimConfig, StepState, Trajectory, prepare_initial, run, step

__all__ = [
    "DoubleWellQuartic", "Grid", "GridFunction", "Logarithmic", "MobchError", "MobilitySpec",
    "NewtonDivergence", "PolynomialGrowth", "PotentialSpec", "RegularizedPotential", "SimConfig",
    "StepState", "Trajectory", "make_potential", "prepare_initial", "run", "step",
]
__version__ = "0.1.0"
