"""Flat ``key = value`` configuration files.

Every key is a dotted name ``section.option``.  Lines starting with ``#``
and blank lines are ignored; unknown keys are rejected.

=========================  ===========  ============================================
key                        default      meaning
=========================  ===========  ============================================
grid.dim                   (required)   1 or 2
grid.n                     (required)   cells per dimension
grid.extent                1.0          side length of the square domain
potential.kind             (required)   double_well | polynomial | logarithmic
potential.lambda           per kind     semiconvexity constant (1, 1, lambda_log)
potential.p                4            growth exponent (polynomial)
potential.K_W              eta          growth constant (polynomial)
potential.eta              1.0          coercivity constant (polynomial)
potential.lambda_log       1.0          quadratic coefficient (logarithmic)
mobility.kind              constant     constant | sine
mobility.value             1.0          constant mobility
mobility.offset            2.0          sine: b(r) = offset + amplitude sin(r)
mobility.amplitude         1.0          sine amplitude
mobility.face              arithmetic   face average: arithmetic | harmonic
sim.epsilon                0.0          viscosity, >= 0
sim.yosida_n               10000        Yosida / mollifier index n
sim.dt                     (required)   time step
sim.t_end                  (required)   final time
sim.newton_tol             1e-10        absolute nonlinear tolerance
sim.newton_max_iter        25           Newton iteration cap
sim.m                      0.9          bound on |mean(u)|
sim.snapshot_every         1            steps between stored snapshots
sim.f                      0.0          constant source term
sim.vanishing_viscosity    true         use epsilon_n = 1/n when epsilon = 0
init.kind                  cosine       cosine | constant | random
init.mean                  0.0          mean of the initial datum
init.amplitude             0.01         cosine amplitude
init.mode                  1            cosine mode along each axis
init.seed                  0            seed for init.kind = random
init.radius                1.0          distance bound for init.kind = random
ensemble.count             20           number of initial data
ensemble.radius            2.0          bound on d_V(u0, 0)
ensemble.mean_band         sim.m        bound on |mean(u0)|
ensemble.seed              0            RNG seed
ensemble.sample_times      10,20,40     comma separated, increasing
ensemble.modes             8            cosine modes of the random fields
ensemble.metric            V            V (energy distance) | H (plain L2)
ensemble.rho_ladder        0.4,0.2,...  covering radii relative to initial diameter
diagnose.window            0.1          minimal regularization window length
diagnose.c_bound           (auto)       d_W bound for the window scan
diagnose.t0                0.0          start of the window scan
=========================  ===========  ============================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MissingRequired, ParseError, UnknownKey
from .grid import Grid, GridFunction, MobilitySpec
from .potentials import DoubleWellQuartic, Logarithmic, PolynomialGrowth, PotentialSpec
from .timestepper import SimConfig

POTENTIAL_KINDS = ("double_well", "polynomial", "logarithmic")
MOBILITY_KINDS = ("constant", "sine")
INIT_KINDS = ("cosine", "constant", "random")


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(options):
    def convert(text):
        if text not in options:
            raise ValueError(f"unknown value {text!r}; valid: {', '.join(options)}")
        return text
    return convert


# key -> (converter, default); default None means optional, REQUIRED must be given
REQUIRED = object()
KEYS = {
    "grid.dim": (int, REQUIRED),
    "grid.n": (int, REQUIRED),
    "grid.extent": (float, 1.0),
    "potential.kind": (_choice(POTENTIAL_KINDS), REQUIRED),
    "potential.lambda": (float, None),
    "potential.p": (float, 4.0),
    "potential.K_W": (float, None),
    "potential.eta": (float, 1.0),
    "potential.lambda_log": (float, 1.0),
    "mobility.kind": (_choice(MOBILITY_KINDS), "constant"),
    "mobility.value": (float, 1.0),
    "mobility.offset": (float, 2.0),
    "mobility.amplitude": (float, 1.0),
    "mobility.face": (_choice(("arithmetic", "harmonic")), "arithmetic"),
    "sim.epsilon": (float, 0.0),
    "sim.yosida_n": (float, 10_000.0),
    "sim.dt": (float, REQUIRED),
    "sim.t_end": (float, REQUIRED),
    "sim.newton_tol": (float, 1e-10),
    "sim.newton_max_iter": (int, 25),
    "sim.m": (float, 0.9),
    "sim.snapshot_every": (int, 1),
    "sim.f": (float, 0.0),
    "sim.vanishing_viscosity": (_bool, True),
    "init.kind": (_choice(INIT_KINDS), "cosine"),
    "init.mean": (float, 0.0),
    "init.amplitude": (float, 0.01),
    "init.mode": (int, 1),
    "init.seed": (int, 0),
    "init.radius": (float, 1.0),
    "ensemble.count": (int, 20),
    "ensemble.radius": (float, 2.0),
    "ensemble.mean_band": (float, None),
    "ensemble.seed": (int, 0),
    "ensemble.sample_times": (_floats, (10.0, 20.0, 40.0)),
    "ensemble.modes": (int, 8),
    "ensemble.metric": (_choice(("V", "H")), "V"),
    "ensemble.rho_ladder": (_floats, (0.4, 0.2, 0.1, 0.05)),
    "diagnose.window": (float, 0.1),
    "diagnose.c_bound": (float, None),
    "diagnose.t0": (float, 0.0),
}


@dataclass
class RootConfig:
    values: dict
    grid: Grid
    potential: PotentialSpec
    mobility: MobilitySpec
    sim: SimConfig
    lines: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def face(self) -> str:
        return self.values["mobility.face"]

    def initial_data(self) -> GridFunction:
        v = self.values
        grid = self.grid
        kind = v["init.kind"]
        if kind == "constant":
            return grid.constant(v["init.mean"])
        if kind == "cosine":
            k = np.pi * v["init.mode"] / grid.extent
            profile = np.ones(grid.shape)
            for x in grid.centers():
                profile = profile * np.cos(k * x)
            return grid.function(v["init.mean"] + v["init.amplitude"] * profile)
        from .attractor import EnsembleConfig, generate_ensemble
        ec = EnsembleConfig(count=1, radius=v["init.radius"], mean_band=abs(v["init.mean"]),
                            seed=v["init.seed"], sample_times=(self.sim.t_end,), base=self.sim)
        return generate_ensemble(ec, self.potential, grid)[0]

    def ensemble_config(self):
        from .attractor import EnsembleConfig
        v = self.values
        band = v["ensemble.mean_band"]
        return EnsembleConfig(
            count=v["ensemble.count"], radius=v["ensemble.radius"],
            mean_band=self.sim.m if band is None else band, seed=v["ensemble.seed"],
            sample_times=tuple(v["ensemble.sample_times"]), base=self.sim,
            modes=v["ensemble.modes"], metric=v["ensemble.metric"],
            rho_ladder=tuple(v["ensemble.rho_ladder"]))


def parse_config_text(text: str) -> RootConfig:
    raw, lines = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError("expected 'key = value'", line=lineno)
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in KEYS:
            raise UnknownKey("unknown key", key=key, line=lineno)
        if key in raw:
            raise ParseError("duplicate key", key=key, line=lineno)
        if not value:
            raise ParseError("empty value", key=key, line=lineno)
        raw[key], lines[key] = value, lineno

    values = {}
    for key, (convert, default) in KEYS.items():
        if key in raw:
            try:
                values[key] = convert(raw[key])
            except ValueError as exc:
                cls = UnknownKey if key.endswith(".kind") else ParseError
                raise cls(str(exc), key=key, line=lines[key]) from None
        elif default is REQUIRED:
            raise MissingRequired("required key is missing", key=key)
        else:
            values[key] = default

    def fail(key, reason):
        raise ConfigError(reason, key=key, line=lines.get(key))

    try:
        grid = Grid(values["grid.dim"], values["grid.n"], values["grid.extent"])
    except ValueError as exc:
        fail("grid.dim", str(exc))

    kind = values["potential.kind"]
    lam = values["potential.lambda"]
    try:
        if kind == "double_well":
            potential = DoubleWellQuartic(lam=1.0 if lam is None else lam)
        elif kind == "polynomial":
            potential = PolynomialGrowth(lam=1.0 if lam is None else lam, p=values["potential.p"],
                                         K_W=values["potential.K_W"], eta=values["potential.eta"])
        else:
            potential = Logarithmic(lam=lam, lambda_log=values["potential.lambda_log"])
    except ValueError as exc:
        fail("potential.kind", str(exc))

    try:
        if values["mobility.kind"] == "constant":
            mobility = MobilitySpec.constant(values["mobility.value"])
        else:
            mobility = MobilitySpec.sine(values["mobility.offset"], values["mobility.amplitude"])
    except ValueError as exc:
        fail("mobility.kind", str(exc))

    if not values["sim.epsilon"] >= 0:
        fail("sim.epsilon", "epsilon >= 0 required (ε ≥ 0)")
    for key in ("sim.dt", "sim.newton_tol", "sim.yosida_n", "sim.m"):
        if not (values[key] > 0 and math.isfinite(values[key])):
            fail(key, "must be a positive finite number")
    if potential.singular and values["sim.m"] >= 1:
        fail("sim.m", "singular potentials need m < 1")
    try:
        sim = SimConfig(
            epsilon=values["sim.epsilon"], yosida_n=values["sim.yosida_n"], dt=values["sim.dt"],
            t_end=values["sim.t_end"], newton_tol=values["sim.newton_tol"],
            newton_max_iter=values["sim.newton_max_iter"], m=values["sim.m"],
            snapshot_every=values["sim.snapshot_every"], f=values["sim.f"],
            vanishing_viscosity=values["sim.vanishing_viscosity"])
    except ValueError as exc:
        fail(None, str(exc))
    return RootConfig(values, grid, potential, mobility, sim, lines)


def parse_config(path) -> RootConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc.strerror}") from None
    return parse_config_text(text)
