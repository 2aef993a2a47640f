"""Configuration potentials, their monotone parts and Yosida regularization.

A potential ``W`` is split as ``W(r) = Phi(r) - lam * r**2 / 2`` where
``Phi`` is convex; ``beta = Phi' = W' + lam * r`` is the monotone part.  The
Yosida approximation ``beta_n = n * (Id - J_n)`` with resolvent
``J_n = (Id + beta / n)^{-1}`` is globally Lipschitz, and the regularized
potential ``W_n`` is the Moreau envelope of ``Phi`` minus the same quadratic.

All functions accept scalars or numpy arrays and are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceFailure, DomainViolation

RESOLVENT_TOL = 1e-13
RESOLVENT_MAX_ITER = 200

# largest double below one: singular potentials are never evaluated beyond it
_EDGE = float(np.nextafter(1.0, 0.0))


def _wrap(r, out):
    if np.ndim(r) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class PotentialSpec:
    """Base class for configuration potentials.

    Subclasses provide ``_w``, ``_wp`` and ``_wpp`` (the potential and its
    first two derivatives, vectorized, no domain checks).
    """

    lam: float = 1.0
    c_W: float | None = None

    kind = "abstract"
    singular = False

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError("semiconvexity constant lam must be a finite nonnegative number")
        if self.c_W is None:
            object.__setattr__(self, "c_W", float(self._lower_bound_offset()))

    @property
    def domain(self) -> tuple[float, float]:
        return (-1.0, 1.0) if self.singular else (-math.inf, math.inf)

    @property
    def growth_exponent(self) -> float | None:
        """Exponent p of the controlled growth condition, None for singular potentials."""
        return None

    @property
    def includes_potential_distance(self) -> bool:
        # the L1 term of the energy distance is redundant for growth p <= 6
        p = self.growth_exponent
        return p is None or p > 6

    def check_domain(self, r):
        r = np.asarray(r, dtype=float)
        if not np.all(np.isfinite(r)):
            raise DomainViolation("non-finite argument")
        if self.singular and np.any(np.abs(r) >= 1.0):
            raise DomainViolation(
                f"{self.kind} potential is only defined on (-1, 1); got max |r| = {np.max(np.abs(r))!r}"
            )
        return r

    # vectorized evaluation with domain checks
    def value(self, r):
        x = self.check_domain(r)
        return _wrap(r, self._w(x))

    def prime(self, r):
        x = self.check_domain(r)
        return _wrap(r, self._wp(x))

    def second(self, r):
        x = self.check_domain(r)
        return _wrap(r, self._wpp(x))

    def beta(self, r):
        x = self.check_domain(r)
        return _wrap(r, self._wp(x) + self.lam * x)

    def beta_prime(self, r):
        x = self.check_domain(r)
        return _wrap(r, np.maximum(self._wpp(x) + self.lam, 0.0))

    def sample_points(self, count=2001):
        if self.singular:
            return np.linspace(-0.999, 0.999, count)
        return np.linspace(-10.0, 10.0, count)

    def check_invariants(self, count=2001) -> list[str]:
        """Sampled checks of W'(0) = 0, W'' >= -lam and W >= 3 lam r^2 - c_W.

        Returns the list of violated properties (empty when all hold).
        """
        r = self.sample_points(count)
        failures = []
        if abs(self._wp(np.array([0.0]))[0]) > 1e-12:
            failures.append("W'(0) != 0")
        if np.any(self._wpp(r) < -self.lam - 1e-12):
            failures.append("W'' >= -lam")
        if np.any(self._w(r) < 3 * self.lam * r**2 - self.c_W - 1e-10):
            failures.append("W >= 3 lam r^2 - c_W")
        if self.singular:
            edge = 1.0 - np.logspace(-3, -12, 10)
            growth = self._wp(edge) * edge
            if not np.all(np.diff(growth) > 0):
                failures.append("W'(r) r -> +inf at the boundary")
        return failures

    def _lower_bound_offset(self):
        r = self.sample_points(20001)
        return max(0.0, float(np.max(3 * self.lam * r**2 - self._w(r))))


@dataclass(frozen=True)
class DoubleWellQuartic(PotentialSpec):
    """W(r) = (r^2 - 1)^2 / 4 on the whole real line."""

    kind = "double_well"

    @property
    def growth_exponent(self):
        return 4.0

    def _w(self, r):
        return 0.25 * (r * r - 1.0) ** 2

    def _wp(self, r):
        return r * r * r - r

    def _wpp(self, r):
        return 3.0 * r * r - 1.0

    def _lower_bound_offset(self):
        # max over s = r^2 >= 0 of 3 lam s - (s - 1)^2 / 4 sits at s = 6 lam + 1
        return 9.0 * self.lam**2 + 3.0 * self.lam


@dataclass(frozen=True)
class PolynomialGrowth(PotentialSpec):
    """W(r) = eta |r|^p / (p (p - 1)) - lam r^2 / 2, so that W'' = eta |r|^(p-2) - lam.

    The second derivative bound ``W'' <= K_W (1 + |r|^(p-2))`` holds whenever
    ``K_W >= eta``; ``K_W`` defaults to ``eta``.
    """

    p: float = 4.0
    K_W: float | None = None
    eta: float = 1.0

    kind = "polynomial"

    def __post_init__(self):
        if not (2.0 < self.p <= 6.0):
            raise ValueError(f"growth exponent p must lie in (2, 6], got {self.p}")
        if self.eta <= 0:
            raise ValueError("coercivity constant eta must be positive")
        if self.K_W is None:
            object.__setattr__(self, "K_W", float(self.eta))
        if self.K_W < self.eta:
            raise ValueError("K_W must be at least eta for the growth bound to hold")
        super().__post_init__()

    @property
    def growth_exponent(self):
        return float(self.p)

    def _w(self, r):
        p = self.p
        return self.eta * np.abs(r) ** p / (p * (p - 1.0)) - 0.5 * self.lam * r * r

    def _wp(self, r):
        p = self.p
        return self.eta * np.abs(r) ** (p - 2.0) * r / (p - 1.0) - self.lam * r

    def _wpp(self, r):
        return self.eta * np.abs(r) ** (self.p - 2.0) - self.lam

    def _lower_bound_offset(self):
        p, lam = self.p, self.lam
        if lam == 0:
            return 0.0
        a = self.eta / (p * (p - 1.0))
        s = (7.0 * lam * (p - 1.0) / self.eta) ** (1.0 / (p - 2.0))
        return max(0.0, 3.5 * lam * s * s - a * s**p)


@dataclass(frozen=True)
class Logarithmic(PotentialSpec):
    """W(r) = (1+r) log(1+r) + (1-r) log(1-r) - lambda_log r^2 / 2 on (-1, 1).

    ``lam`` defaults to ``lambda_log``; ``W'' >= -lam`` needs ``lam >= lambda_log - 2``.
    """

    lam: float | None = None
    lambda_log: float = 1.0

    kind = "logarithmic"
    singular = True

    def __post_init__(self):
        if self.lambda_log <= 0:
            raise ValueError("lambda_log must be positive")
        if self.lam is None:
            object.__setattr__(self, "lam", float(self.lambda_log))
        super().__post_init__()

    def _w(self, r):
        return (1.0 + r) * np.log1p(r) + (1.0 - r) * np.log1p(-r) - 0.5 * self.lambda_log * r * r

    def _wp(self, r):
        return np.log1p(r) - np.log1p(-r) - self.lambda_log * r

    def _wpp(self, r):
        return 2.0 / ((1.0 - r) * (1.0 + r)) - self.lambda_log


@dataclass(frozen=True)
class RegularizedPotential:
    """Yosida regularization of index 1/n of a potential."""

    base: PotentialSpec
    n: float = field(default=1000)

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("Yosida index n must be positive")

    @property
    def lam(self):
        return self.base.lam

    def resolvent(self, r):
        return _wrap(r, _resolvent(self.base, float(self.n), np.asarray(r, dtype=float)))

    def beta_n(self, r):
        r_arr = np.asarray(r, dtype=float)
        v = _resolvent(self.base, float(self.n), r_arr)
        return _wrap(r, self._beta_n_from(r_arr, v))

    def beta_n_prime(self, r):
        v = _resolvent(self.base, float(self.n), np.asarray(r, dtype=float))
        return _wrap(r, self._beta_n_prime_from(v))

    def value(self, r):
        r_arr = np.asarray(r, dtype=float)
        v = _resolvent(self.base, float(self.n), r_arr)
        return _wrap(r, self._value_from(r_arr, v))

    def prime(self, r):
        """W_n' = beta_n - lam * Id."""
        r_arr = np.asarray(r, dtype=float)
        return _wrap(r, self.beta_n(r_arr) - self.lam * r_arr)

    def evaluate(self, r):
        """Return ``(W_n, beta_n, beta_n')`` with a single resolvent solve."""
        r = np.asarray(r, dtype=float)
        v = _resolvent(self.base, float(self.n), r)
        bn = self._beta_n_from(r, v)
        return self._value_from(r, v, bn), bn, self._beta_n_prime_from(v)

    def _beta_n_from(self, r, v):
        # beta(v) and n (r - v) agree at the root; take the one less sensitive to
        # the rounding of v (beta' ulp(v) versus n ulp(r)); the clamped edge needs n (r - v)
        base = self.base
        at_edge = np.abs(v) >= _EDGE if base.singular else np.zeros(v.shape, dtype=bool)
        interior = np.where(at_edge, 0.0, v)
        out = base._wp(interior) + base.lam * interior
        slope = np.maximum(base._wpp(interior) + base.lam, 0.0)
        use_diff = at_edge | (slope * np.abs(v) > self.n * np.maximum(np.abs(r), np.abs(v)))
        if np.any(use_diff):
            out = np.where(use_diff, self.n * (r - v), out)
        return out

    def _beta_n_prime_from(self, v):
        bp = np.maximum(self.base._wpp(v) + self.base.lam, 0.0)
        return bp / (1.0 + bp / self.n)

    def _value_from(self, r, v, bn=None):
        if bn is None:
            bn = self._beta_n_from(r, v)
        lam = self.base.lam
        return self.base._w(v) + 0.5 * lam * v * v + bn * bn / (2.0 * self.n) - 0.5 * lam * r * r


def _resolvent(spec: PotentialSpec, n: float, r: np.ndarray) -> np.ndarray:
    """Solve v + beta(v) / n = r elementwise by Newton safeguarded with bisection."""
    if not np.all(np.isfinite(r)):
        raise DomainViolation("non-finite argument to resolvent")
    shape = r.shape
    r = r.ravel()
    lo_dom, hi_dom = (-_EDGE, _EDGE) if spec.singular else (-np.inf, np.inf)
    # beta is monotone with beta(0) = 0, so the root lies between 0 and r
    lo = np.where(r >= 0, 0.0, np.maximum(r, lo_dom))
    hi = np.where(r >= 0, np.minimum(r, hi_dom), 0.0)
    x = np.clip(r, lo, hi)
    active = np.ones(r.shape, dtype=bool)
    g_prev = np.full(r.shape, np.inf)
    lam = spec.lam
    for _ in range(RESOLVENT_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa, ra = x[idx], r[idx]
        g = xa + (spec._wp(xa) + lam * xa) / n - ra
        dg = 1.0 + np.maximum(spec._wpp(xa) + lam, 0.0) / n
        la, ha = lo[idx], hi[idx]
        la = np.where(g < 0, xa, la)
        ha = np.where(g > 0, xa, ha)
        lo[idx], hi[idx] = la, ha
        step = g / dg
        xn = xa - step
        # bisect when Newton leaves the bracket or fails to halve the residual
        slow = np.abs(g) > 0.5 * g_prev[idx]
        g_prev[idx] = np.abs(g)
        bad = ~np.isfinite(xn) | (xn < la) | (xn > ha) | slow
        xn = np.where(bad, 0.5 * (la + ha), xn)
        # g' >= 1, so |g| bounds the error in v; a small step alone is not enough
        # near the edge of a singular domain, where beta' is huge
        floor = 64 * np.finfo(float).eps * (np.abs(ra) + np.abs(xa) + np.abs(g + ra - xa))
        small = np.abs(g) <= np.maximum(RESOLVENT_TOL, floor)
        done = (g == 0) | small | (ha - la <= RESOLVENT_TOL)
        x[idx] = np.where(g == 0, xa, xn)
        active[idx[done]] = False
    else:
        if np.any(active):
            raise ConvergenceFailure(
                f"resolvent did not converge in {RESOLVENT_MAX_ITER} iterations "
                f"for {int(active.sum())} values"
            )
    # keep sign consistency with r despite roundoff
    x = np.where(r >= 0, np.clip(x, 0.0, np.maximum(r, 0.0)), np.clip(x, np.minimum(r, 0.0), 0.0))
    if spec.singular:
        x = np.clip(x, -_EDGE, _EDGE)
    return x.reshape(shape)


def w_value(spec: PotentialSpec, r):
    return spec.value(r)


def w_prime(spec: PotentialSpec, r):
    return spec.prime(r)


def beta(spec: PotentialSpec, r):
    return spec.beta(r)


def resolvent(reg: RegularizedPotential, r):
    return reg.resolvent(r)


def yosida_beta(reg: RegularizedPotential, r):
    return reg.beta_n(r)


def w_n_value(reg: RegularizedPotential, r):
    return reg.value(r)


def separating_growth_test(spec: PotentialSpec, c_probe: float, r_start: float,
                           n_samples: int = 48, ratio: float = 0.5) -> bool:
    """Sampled check of beta(r) >= c/(1-r)^3 near 1 and -beta(r) >= c/(1+r)^3 near -1.

    The probe points form the geometric ladder ``1 - (1 - r_start) * ratio**k``,
    mirrored to the left end, stopping before they round to 1.
    """
    if not spec.singular:
        raise DomainViolation("separating growth test needs a potential on (-1, 1)")
    if not 0.0 < r_start < 1.0:
        raise DomainViolation("r_start must lie in (0, 1)")
    gaps = (1.0 - r_start) * ratio ** np.arange(n_samples)
    r = 1.0 - gaps
    keep = r < 1.0
    r, gaps = r[keep], 1.0 - r[keep]
    right = spec.beta(r) * gaps**3
    left = -spec.beta(-r) * gaps**3
    return bool(np.all(right >= c_probe) and np.all(left >= c_probe))


def make_potential(kind: str, **params) -> PotentialSpec:
    """Build a potential from its configuration name."""
    kinds = {"double_well": DoubleWellQuartic, "polynomial": PolynomialGrowth,
             "logarithmic": Logarithmic}
    try:
        cls = kinds[kind]
    except KeyError:
        raise ValueError(f"unknown potential kind {kind!r}; valid: {', '.join(kinds)}") from None
    return cls(**params)
