import subprocess
import sys

import numpy as np
import pytest

from mobch.cli import dispatch
from mobch.io import read_csv

RUN_CONFIG = """\
grid.dim = 1
grid.n = 32
grid.extent = 5
potential.kind = double_well
mobility.kind = sine
sim.dt = 0.01
sim.t_end = 0.5
sim.snapshot_every = 5
init.amplitude = 0.3
"""

DIVERGENT = """\
grid.dim = 1
grid.n = 64
potential.kind = logarithmic
potential.lambda_log = 3
mobility.kind = sine
sim.yosida_n = 1e8
sim.dt = 10
sim.t_end = 100
sim.m = 0.5
sim.newton_max_iter = 2
init.amplitude = 0.5
"""


def write(tmp_path, text, name="c.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestRun:
    def test_run_writes_trajectory(self, tmp_path, capsys):
        cfg = write(tmp_path, RUN_CONFIG)
        assert dispatch(["run", "--config", cfg, "--out", str(tmp_path / "out"), "--snapshots"]) == 0
        table = read_csv(tmp_path / "out" / "trajectory.csv")
        assert list(table) == ["t", "mass", "energy", "energy_n", "entropy", "h2_norm", "newton_iters"]
        assert table["t"].size == 11
        np.testing.assert_allclose(table["mass"], table["mass"][0], atol=1e-15)
        assert np.all(np.diff(table["energy_n"]) <= 1e-9)
        assert len(list((tmp_path / "out" / "snapshots").glob("u_*.snap"))) == 11

    def test_outputs_are_byte_identical(self, tmp_path):
        cfg = write(tmp_path, RUN_CONFIG + "init.kind = random\ninit.seed = 5\n")
        for name in ("a", "b"):
            assert dispatch(["run", "--config", cfg, "--out", str(tmp_path / name), "--snapshots"]) == 0
        for rel in ("trajectory.csv", "snapshots/u_00000050.snap", "snapshots/w_00000050.snap"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_divergence_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, DIVERGENT)
        assert dispatch(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 2
        assert capsys.readouterr().err.startswith("mobch: solver divergence at step 1")

    def test_config_errors(self, tmp_path, capsys):
        bad = write(tmp_path, RUN_CONFIG.replace("double_well", "quartic"))
        assert dispatch(["run", "--config", bad, "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("mobch:") and "logarithmic" in err
        neg = write(tmp_path, RUN_CONFIG + "sim.epsilon = -1\n", "neg.cfg")
        assert dispatch(["run", "--config", neg, "--out", str(tmp_path / "o")]) == 1
        assert "ε ≥ 0" in capsys.readouterr().err
        assert dispatch(["run", "--config", str(tmp_path / "missing.cfg"), "--out", "x"]) == 1


class TestDiagnose:
    def test_usage_without_traj(self, capsys):
        assert dispatch(["diagnose"]) == 1
        err = capsys.readouterr().err
        assert "usage:" in err and "--traj" in err and "mobch:" in err

    def test_diagnose_passes_on_a_clean_run(self, tmp_path):
        cfg = write(tmp_path, RUN_CONFIG)
        out = str(tmp_path / "out")
        assert dispatch(["run", "--config", cfg, "--out", out, "--snapshots"]) == 0
        assert dispatch(["diagnose", "--traj", out, "--config", cfg]) == 0
        report = (tmp_path / "out" / "report.txt").read_text()
        assert "FAIL" not in report and report.rstrip().endswith("result: PASS")
        table = read_csv(tmp_path / "out" / "diagnostics.csv")
        assert table["t"].size == 11 and np.all(np.diff(table["dissipation"]) >= 0)

    def test_diagnostic_failure_exit_code(self, tmp_path):
        cfg = write(tmp_path, RUN_CONFIG)
        out = tmp_path / "out"
        assert dispatch(["run", "--config", cfg, "--out", str(out), "--snapshots"]) == 0
        # corrupt one snapshot so that mass is no longer conserved
        snap = out / "snapshots" / "u_00000050.snap"
        lines = snap.read_text().splitlines()
        lines[1] = repr(float(lines[1]) + 0.1)
        snap.write_text("\n".join(lines) + "\n")
        assert dispatch(["diagnose", "--traj", str(out), "--config", cfg]) == 3
        assert "FAIL  mass conservation" in (out / "report.txt").read_text()

    def test_missing_snapshots(self, tmp_path, capsys):
        cfg = write(tmp_path, RUN_CONFIG)
        assert dispatch(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        assert dispatch(["diagnose", "--traj", str(tmp_path / "out"), "--config", cfg]) == 1
        assert "--snapshots" in capsys.readouterr().err


class TestOtherCommands:
    def test_potential_table(self, tmp_path):
        cfg = write(tmp_path, RUN_CONFIG.replace("double_well", "logarithmic"))
        path = tmp_path / "table.csv"
        args = ["potential-table", "--config", cfg, "--r-min", "-1.5", "--r-max", "1.5",
                "--count", "7", "--out", str(path)]
        assert dispatch(args) == 0
        table = read_csv(path)
        assert list(table) == ["r", "W", "Wprime", "beta", "beta_n", "W_n"]
        inside = np.abs(table["r"]) < 1
        assert np.all(np.isnan(table["W"][~inside])) and np.all(np.isfinite(table["W"][inside]))
        assert np.all(np.isfinite(table["beta_n"]))
        assert dispatch(args[:-2] + ["--count", "1"]) == 1

    def test_ensemble(self, tmp_path):
        cfg = write(tmp_path, RUN_CONFIG + "ensemble.count = 3\nensemble.sample_times = 0.1, 0.5\n"
                    "ensemble.mean_band = 0.2\n")
        out = tmp_path / "ens"
        assert dispatch(["ensemble", "--config", cfg, "--out", str(out)]) == 0
        assert sorted(p.name for p in out.glob("member_*.csv")) == [f"member_00{k}.csv" for k in range(3)]
        table = read_csv(out / "compactness.csv")
        assert list(table) == ["t_k", "rho", "covering_number", "diameter", "max_residual"]
        assert table["t_k"].size == 2 * 4

    @pytest.mark.slow
    def test_console_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "mobch", "diagnose"], capture_output=True, text=True)
        assert proc.returncode == 1 and "mobch:" in proc.stderr
