"""Command-line entry point: ``mobch run | ensemble | diagnose | potential-table``.

Exit codes: 0 success, 1 configuration or usage error, 2 solver divergence,
3 diagnostic failure.  Errors go to standard error prefixed with ``mobch:``.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .attractor import compactness_probe, run_ensemble
from .config import RootConfig, parse_config
from .diagnostics import (EnergySeries, energy_report, entropy_dissipation_check,
                          entropy_functional, fit_dissipativity, regularization_distances,
                          regularization_window_scan)
from .errors import (ConfigError, ConvergenceFailure, MobchError, NewtonDivergence,
                     WrongPotentialClass)
from .grid import norms
from .potentials import RegularizedPotential
from .timestepper import StepState, Trajectory, prepare_initial, run

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_DIAGNOSTIC = 0, 1, 2, 3

TRAJECTORY_COLUMNS = ("t", "mass", "energy", "energy_n", "entropy", "h2_norm", "newton_iters")


class _UsageError(Exception):
    def __init__(self, message, usage):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message, self.format_usage())


def _trajectory_columns(traj: Trajectory, cfg: RootConfig, reg: RegularizedPotential) -> dict:
    spec, mob, grid = cfg.potential, cfg.mobility, traj.grid
    f = traj.config.source(grid)
    cols = {k: [] for k in TRAJECTORY_COLUMNS}
    for s in traj.states:
        x = s.u.flat
        dv = grid.cell_volume
        grad = 0.5 * dv * float(np.dot(grid.laplacian @ x, x)) + dv * float(np.dot(f, x))
        if spec.singular and np.any(np.abs(x) >= 1.0):
            e = math.nan
        else:
            e = grad + dv * float(np.sum(spec.value(x)))
        cols["t"].append(s.t)
        cols["mass"].append(float(np.mean(x)))
        cols["energy"].append(e)
        cols["energy_n"].append(grad + dv * float(np.sum(reg.value(x))))
        cols["entropy"].append(entropy_functional(s.u, mob))
        cols["h2_norm"].append(norms(s.u).h2_discrete)
        cols["newton_iters"].append(int(s.newton_iters))
    return cols


def _snapshot_name(kind: str, step_index: int) -> str:
    return f"{kind}_{step_index:08d}.snap"


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reg = RegularizedPotential(cfg.potential, cfg.sim.yosida_n)
    u0 = prepare_initial(cfg.initial_data(), cfg.sim, reg)
    traj = run(u0, cfg.sim, cfg.mobility, reg, face=cfg.face)
    io.write_csv(out / "trajectory.csv", _trajectory_columns(traj, cfg, reg))
    if args.snapshots:
        snaps = out / "snapshots"
        snaps.mkdir(exist_ok=True)
        for s in traj.states:
            io.write_snapshot(snaps / _snapshot_name("u", s.step_index), s.u, s.t)
            io.write_snapshot(snaps / _snapshot_name("w", s.step_index), s.w, s.t)
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = parse_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ecfg = cfg.ensemble_config()
    trajs = run_ensemble(ecfg, cfg.grid, cfg.potential, cfg.mobility)
    reg = RegularizedPotential(cfg.potential, cfg.sim.yosida_n)
    for k, traj in enumerate(trajs):
        io.write_csv(out / f"member_{k:03d}.csv", _trajectory_columns(traj, cfg, reg))
    report = compactness_probe(trajs, ecfg, cfg.potential, cfg.mobility)
    rows = report.rows()
    io.write_csv(out / "compactness.csv", {
        "t_k": [r.t for r in rows],
        "rho": [r.rho for r in rows],
        "covering_number": [r.covering_number for r in rows],
        "diameter": [r.diameter for r in rows],
        "max_residual": [r.max_residual for r in rows],
    })
    return EXIT_OK


def load_trajectory(directory, cfg: RootConfig) -> Trajectory:
    """Rebuild a trajectory from the snapshot files written by ``mobch run --snapshots``."""
    directory = Path(directory)
    snaps = directory / "snapshots"
    u_files = sorted(snaps.glob("u_*.snap")) if snaps.is_dir() else []
    if not u_files:
        raise ConfigError(f"no snapshots under {snaps}; rerun 'mobch run' with --snapshots")
    iters = {}
    csv_path = directory / "trajectory.csv"
    if csv_path.exists():
        table = io.read_csv(csv_path)
        iters = dict(zip(table["t"], table["newton_iters"]))
    states = []
    for path in u_files:
        index = int(path.stem.split("_")[1])
        u, t = io.read_snapshot(path)
        w, _ = io.read_snapshot(snaps / _snapshot_name("w", index))
        states.append(StepState(u, w, t, index, int(iters.get(t, 0))))
    if states[0].u.grid != cfg.grid:
        raise ConfigError("snapshot grid does not match the config grid")
    reg = RegularizedPotential(cfg.potential, cfg.sim.yosida_n)
    e0 = float(_trajectory_columns(Trajectory(states[:1], cfg.sim, 0.0), cfg, reg)["energy_n"][0])
    return Trajectory(states, cfg.sim, e0)


def cmd_diagnose(args) -> int:
    cfg = parse_config(args.config)
    traj = load_trajectory(args.traj, cfg)
    out = Path(args.out) if args.out else Path(args.traj)
    reg = RegularizedPotential(cfg.potential, cfg.sim.yosida_n)
    rep = energy_report(traj, cfg.mobility, reg)
    dist = regularization_distances(traj, cfg.potential, reg)
    io.write_csv(out / "diagnostics.csv", {
        "t": rep.times, "energy": rep.energy, "energy_n": rep.energy_n,
        "dissipation": rep.dissipation, "visc_dissipation": rep.visc_dissipation,
        "mass": rep.mass, "entropy": rep.entropy, "h2": rep.h2,
        "residual_energy_eq": rep.residual_energy_eq, "d_W": dist,
    })

    lines = ["mobch diagnostic report", ""]
    failed = []

    def check(name, ok, detail):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        if not ok:
            failed.append(name)

    u0 = traj.states[0].u
    drift = float(np.max(np.abs(rep.mass - rep.mass[0])))
    scale = max(1.0, norms(u0).l2 / math.sqrt(u0.grid.volume))
    check("mass conservation", drift <= 1e-10 * scale, f"max drift {drift:.3e} (bound {1e-10 * scale:.1e})")
    rise = float(np.max(np.diff(rep.energy_n), initial=0.0))
    check("regularized energy nonincreasing", rise <= 1e-9, f"largest increase {rise:.3e} (bound 1e-9)")
    steps = np.diff(rep.dissipation)
    drop = float(steps.min()) if steps.size else 0.0
    check("dissipation nondecreasing", drop >= 0.0, f"smallest increment {drop:.3e}")

    lines.append("")
    defect = float(abs(rep.residual_energy_eq[-1]))
    lines.append(f"INFO  energy equality defect on [{rep.times[0]:g}, {rep.times[-1]:g}]: {defect:.6e}")
    fit = fit_dissipativity([EnergySeries(rep.times, rep.energy_n, rep.energy_n[0])])
    lines.append(f"INFO  dissipativity fit: kappa = {fit.kappa:.6g}, C0 = {fit.c0:.6g}, "
                 f"worst margin = {fit.margin:.3e}")
    try:
        ent = entropy_dissipation_check(traj, cfg.mobility, cfg.potential)
        lines.append(f"INFO  entropy estimate: c6 = {ent.c6:.6g}, violations = {ent.violations}")
    except WrongPotentialClass as exc:
        lines.append(f"INFO  entropy estimate skipped: {exc}")
    c_bound = cfg["diagnose.c_bound"]
    t0 = cfg["diagnose.t0"]
    if c_bound is None:
        late = dist[rep.times >= t0]
        c_bound = float(late.max()) if late.size else float(dist.max())
    windows = regularization_window_scan(traj, cfg.potential, c_bound, cfg["diagnose.window"],
                                         reg=reg, distances=dist)
    lines.append(f"INFO  regularization windows at C_bound = {c_bound:.6g}: "
                 + (", ".join(f"[{w.onset:g}, {w.onset + w.length:g}]" for w in windows) or "none"))
    lines.append("")
    lines.append("result: " + ("FAIL (" + ", ".join(failed) + ")" if failed else "PASS"))
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if failed:
        print(f"mobch: diagnostic failure: {', '.join(failed)}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    return EXIT_OK


def cmd_potential_table(args) -> int:
    cfg = parse_config(args.config)
    if args.count < 2 or not args.r_max > args.r_min:
        raise ConfigError("need --count >= 2 and --r-max > --r-min")
    spec = cfg.potential
    reg = RegularizedPotential(spec, cfg.sim.yosida_n)
    r = np.linspace(args.r_min, args.r_max, args.count)
    inside = np.abs(r) < 1.0 if spec.singular else np.ones(r.shape, dtype=bool)
    W = np.full(r.shape, math.nan)
    Wp = np.full(r.shape, math.nan)
    beta = np.full(r.shape, math.nan)
    W[inside] = spec.value(r[inside])
    Wp[inside] = spec.prime(r[inside])
    beta[inside] = spec.beta(r[inside])
    Wn, bn, _ = reg.evaluate(r)
    cols = {"r": r, "W": W, "Wprime": Wp, "beta": beta, "beta_n": bn, "W_n": Wn}
    if args.out:
        io.write_csv(args.out, cols)
    else:
        names = list(cols)
        print(",".join(names))
        for row in zip(*cols.values()):
            print(",".join(io.fmt(x) for x in row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mobch", description="Cahn-Hilliard solver with state-dependent mobility.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="integrate one trajectory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--snapshots", action="store_true", help="also write snapshot files of u and w")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ensemble", help="run an ensemble and probe compactness")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("diagnose", help="check a trajectory written by 'run --snapshots'")
    p.add_argument("--traj", required=True, help="output directory of 'mobch run'")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="directory for diagnostics.csv and report.txt (default: --traj)")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("potential-table", help="tabulate W, W', beta, beta_n and W_n")
    p.add_argument("--config", required=True)
    p.add_argument("--r-min", type=float, default=-2.0)
    p.add_argument("--r-max", type=float, default=2.0)
    p.add_argument("--count", type=int, default=401)
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_potential_table)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        sys.stderr.write(exc.usage)
        print(f"mobch: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"mobch: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonDivergence, ConvergenceFailure) as exc:
        step = getattr(exc, "step_index", None)
        where = f" at step {step}" if step is not None else ""
        print(f"mobch: solver divergence{where}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MobchError as exc:
        print(f"mobch: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"mobch: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None) -> int:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))
