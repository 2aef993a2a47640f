"""Cell-centred finite differences on uniform 1D/2D grids with zero-flux boundaries.

``B`` denotes the Neumann operator with the sign of ``-Laplacian`` (positive
semidefinite) and ``B_u`` its mobility-weighted version
``-div(b(u) grad .)`` in conservative flux form.  Inner products and norms
use cell quadrature, ``<v, z> = h**dim * sum(v * z)``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import BoundsViolation, ConvergenceFailure, DomainViolation, MeanNotZero

CG_RTOL = 1e-11


@dataclass(frozen=True)
class Grid:
    dim: int
    n_cells: int
    extent: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        if self.n_cells < 1:
            raise ValueError("n_cells must be positive")
        if not self.extent > 0:
            raise ValueError("extent must be positive")

    @property
    def h(self) -> float:
        return self.extent / self.n_cells

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_cells,) * self.dim

    @property
    def size(self) -> int:
        return self.n_cells**self.dim

    @property
    def volume(self) -> float:
        return self.extent**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def centers(self):
        """Cell-centre coordinates, one array per axis (``meshgrid`` layout in 2D)."""
        x = (np.arange(self.n_cells) + 0.5) * self.h
        if self.dim == 1:
            return (x,)
        return tuple(np.meshgrid(x, x, indexing="ij"))

    def function(self, values) -> "GridFunction":
        return GridFunction(self, values)

    def constant(self, c: float) -> "GridFunction":
        return GridFunction(self, np.full(self.shape, float(c)))

    @functools.cached_property
    def difference(self) -> sp.csr_matrix:
        """Unscaled difference across every interior face (faces x cells)."""
        n = self.n_cells
        d1 = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
        if self.dim == 1:
            return d1.tocsr()
        eye = sp.identity(n)
        return sp.vstack([sp.kron(d1, eye), sp.kron(eye, d1)]).tocsr()

    @functools.cached_property
    def face_average(self) -> sp.csr_matrix:
        """Arithmetic mean of the two cells adjacent to each interior face."""
        return abs(self.difference).multiply(0.5).tocsr()

    @functools.cached_property
    def laplacian(self) -> sp.csr_matrix:
        D = self.difference
        return (D.T @ D).tocsr() / self.h**2

    def face_mobility(self, b_cells: np.ndarray, face: str = "arithmetic") -> np.ndarray:
        """Mobility on interior faces from cell values (arithmetic or harmonic mean)."""
        b = np.asarray(b_cells, dtype=float).ravel()
        D = self.difference
        if face == "arithmetic":
            return self.face_average @ b
        if face == "harmonic":
            left = D.maximum(0) @ b
            right = (-D).maximum(0) @ b
            return 2.0 * left * right / (left + right)
        raise ValueError(f"unknown face averaging {face!r}")

    def mobility_operator(self, b_cells: np.ndarray, face: str = "arithmetic") -> sp.csr_matrix:
        """Matrix of B_u for cell mobilities ``b_cells`` (flattened)."""
        D = self.difference
        return (D.T @ sp.diags(self.face_mobility(b_cells, face)) @ D).tocsr() / self.h**2

    def flux_divergence(self, face_values: np.ndarray, w: np.ndarray) -> np.ndarray:
        """D^T (face_values * D w) / h^2; exactly zero for constant ``w``."""
        D = self.difference
        return D.T @ (face_values * (D @ np.ravel(w))) / self.h**2


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __sub__(self, other):
        other = other.values if isinstance(other, GridFunction) else other
        return self.with_values(self.values - other)

    def __add__(self, other):
        other = other.values if isinstance(other, GridFunction) else other
        return self.with_values(self.values + other)


@dataclass(frozen=True)
class MobilitySpec:
    """Mobility ``b`` with bounds ``alpha <= b <= mu_upper`` and Lipschitz constant."""

    b: Callable[[np.ndarray], np.ndarray]
    alpha: float
    mu_upper: float
    lipschitz: float
    kind: str = "custom"

    def __post_init__(self):
        if not (0 < self.alpha <= self.mu_upper):
            raise ValueError("mobility bounds need 0 < alpha <= mu_upper")

    def __call__(self, r):
        out = self.b(np.asarray(r, dtype=float))
        return float(out) if np.ndim(r) == 0 else np.broadcast_to(out, np.shape(r)).astype(float)

    @classmethod
    def constant(cls, value: float = 1.0) -> "MobilitySpec":
        return cls(functools.partial(_constant_b, value=float(value)), value, value, 0.0, "constant")

    @classmethod
    def sine(cls, offset: float = 2.0, amplitude: float = 1.0) -> "MobilitySpec":
        """b(r) = offset + amplitude * sin(r)."""
        a = abs(amplitude)
        return cls(functools.partial(_sine_b, offset=float(offset), amplitude=float(amplitude)),
                   offset - a, offset + a, a, "sine")

    def check_invariants(self, samples: int = 10_000, seed: int = 0) -> list[str]:
        rng = np.random.default_rng(seed)
        r = rng.uniform(-50, 50, samples)
        s = rng.uniform(-50, 50, samples)
        br, bs = self(r), self(s)
        failures = []
        if np.any(br < self.alpha - 1e-14) or np.any(br > self.mu_upper + 1e-14):
            failures.append("alpha <= b <= mu_upper")
        if np.any(np.abs(br - bs) > self.lipschitz * np.abs(r - s) + 1e-12):
            failures.append("Lipschitz bound")
        return failures


def _constant_b(r, value):
    return np.full(np.shape(r), value)


def _sine_b(r, offset, amplitude):
    return offset + amplitude * np.sin(r)


class Norms(NamedTuple):
    l1: float
    l2: float
    h1_semi: float
    h2_discrete: float

    @property
    def h1(self) -> float:
        """Full V-norm, (l2^2 + h1_semi^2)^(1/2)."""
        return math.hypot(self.l2, self.h1_semi)


def inner(v: GridFunction, z: GridFunction) -> float:
    return float(v.grid.cell_volume * np.dot(v.flat, z.flat))


def mean(v: GridFunction) -> float:
    return float(np.mean(v.values))


def laplacian_neumann(v: GridFunction) -> GridFunction:
    return v.with_values(v.grid.flux_divergence(1.0, v.flat))


def _check_bounds(b, bounds):
    if bounds is None:
        return
    lo, hi = bounds
    if np.any(b < lo) or np.any(b > hi):
        raise BoundsViolation(f"mobility values in [{b.min()!r}, {b.max()!r}] leave [{lo}, {hi}]")


def div_b_grad(b_cells: GridFunction, w: GridFunction, bounds=None,
               face: str = "arithmetic") -> GridFunction:
    """Apply B_u in flux form; ``bounds=(alpha, mu_upper)`` enables the range check."""
    b = b_cells.flat
    _check_bounds(b, bounds)
    grid = w.grid
    return w.with_values(grid.flux_divergence(grid.face_mobility(b, face), w.flat))


def cell_norm(grid: Grid, x: np.ndarray) -> float:
    return float(math.sqrt(grid.cell_volume) * np.linalg.norm(np.ravel(x)))


def _pcg(A, rhs, grid, atol_cell, x0=None):
    diag = A.diagonal()
    diag = np.where(diag > 0, diag, 1.0)
    M = sp.diags(1.0 / diag)
    atol = atol_cell / math.sqrt(grid.cell_volume)
    x, info = cg(A, rhs, x0=x0, rtol=0.0, atol=atol, M=M, maxiter=20 * rhs.size + 100)
    if info != 0:
        raise ConvergenceFailure(f"conjugate gradients stalled (info={info})")
    return x


def solve_neumann_inverse(b_cells: GridFunction, rhs: GridFunction, tol: float | None = None,
                          bounds=None) -> GridFunction:
    """Return the mean-zero solution of B_u zeta = rhs for mean-zero ``rhs``.

    ``tol`` bounds the cell-norm residual; by default it is ``1e-11 * ||rhs||``.
    """
    grid = rhs.grid
    f = rhs.flat
    scale = cell_norm(grid, f)
    if tol is None:
        tol = CG_RTOL * max(scale, 1e-300)
    if abs(float(np.mean(f))) > tol:
        raise MeanNotZero(f"right-hand side has mean {np.mean(f)!r}; the inverse needs mean zero")
    if scale == 0.0:
        return grid.constant(0.0)
    b = b_cells.flat
    _check_bounds(b, bounds)
    A = grid.mobility_operator(b)
    f0 = f - np.mean(f)
    x = _pcg(A, f0, grid, 0.5 * tol)
    x -= np.mean(x)
    res = cell_norm(grid, A @ x - f)
    if res > tol:
        raise ConvergenceFailure(f"residual {res:.3e} above tolerance {tol:.3e}")
    return grid.function(x)


def elliptic_mollify(v: GridFunction, n: float, rtol: float = 1e-13) -> GridFunction:
    """Return (I + B/n)^{-1} v; the mean is carried over exactly."""
    grid = v.grid
    m = float(np.mean(v.flat))
    f0 = v.flat - m
    scale = cell_norm(grid, f0)
    if scale == 0.0:
        return v.with_values(np.full(grid.shape, m))
    A = (sp.identity(grid.size, format="csr") + grid.laplacian / float(n)).tocsr()
    x = _pcg(A, f0, grid, rtol * scale, x0=f0.copy())
    x -= np.mean(x)
    return grid.function(m + x)


def norms(v: GridFunction) -> Norms:
    grid = v.grid
    x = v.flat
    bx = grid.laplacian @ x
    l2sq = grid.cell_volume * float(np.dot(x, x))
    h1sq = max(grid.cell_volume * float(np.dot(bx, x)), 0.0)
    bsq = grid.cell_volume * float(np.dot(bx, bx))
    return Norms(
        l1=grid.cell_volume * float(np.sum(np.abs(x))),
        l2=math.sqrt(l2sq),
        h1_semi=math.sqrt(h1sq),
        h2_discrete=math.sqrt(l2sq + bsq),
    )


def dist_V(v: GridFunction, z: GridFunction, spec) -> float:
    """L2 distance plus, when not redundant, the L1 distance of potential values."""
    d = cell_norm(v.grid, v.flat - z.flat)
    if spec.includes_potential_distance:
        wv, wz = spec.value(v.flat), spec.value(z.flat)
        d += v.grid.cell_volume * float(np.sum(np.abs(wv - wz)))
    return d


def dist_W(v: GridFunction, z: GridFunction, spec, reg=None) -> float:
    """Discrete H2 distance plus, for singular potentials, the L2 distance of beta.

    When a state leaves the domain of a singular potential the Yosida
    approximation ``reg.beta_n`` replaces ``beta`` (``reg`` is then required).
    """
    diff = v - z
    d = norms(diff).h2_discrete
    if spec.singular:
        inside = np.all(np.abs(v.flat) < 1.0) and np.all(np.abs(z.flat) < 1.0)
        if inside:
            bv, bz = spec.beta(v.flat), spec.beta(z.flat)
        elif reg is None:
            raise DomainViolation("state leaves (-1, 1); pass the regularized potential")
        else:
            bv, bz = reg.beta_n(v.flat), reg.beta_n(z.flat)
        d += cell_norm(v.grid, bv - bz)
    return d


def mobility_operator_apply(grid: Grid, b_cells: np.ndarray, w: np.ndarray) -> np.ndarray:
    """B_u w for flattened arrays, arithmetic face mobilities."""
    return grid.flux_divergence(grid.face_mobility(b_cells), w)
