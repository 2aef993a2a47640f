import numpy as np
import pytest

from mobch.attractor import (EnsembleConfig, compactness_probe, covering_number, generate_ensemble,
                             pairwise_distances, run_ensemble, steady_state_residual, worker_count)
from mobch.errors import MismatchedSampling, RadiusInfeasible
from mobch.grid import Grid, MobilitySpec, dist_V, mean
from mobch.potentials import DoubleWellQuartic, Logarithmic
from mobch.timestepper import SimConfig, StepState

DW = DoubleWellQuartic()
SINE = MobilitySpec.sine()


def small_config(**kw):
    opts = dict(count=6, radius=2.0, mean_band=0.25, seed=3, sample_times=(0.1, 0.2),
                base=SimConfig(dt=0.01, snapshot_every=5, m=0.25))
    opts.update(kw)
    return EnsembleConfig(**opts)


class TestGenerate:
    @pytest.mark.parametrize("grid", [Grid(1, 32, 3.0), Grid(2, 10, 2.0)], ids=["1d", "2d"])
    def test_radius_and_mean(self, grid):
        cfg = small_config(count=10)
        members = generate_ensemble(cfg, DW, grid)
        assert len(members) == 10
        zero = grid.constant(0.0)
        for u in members:
            assert abs(mean(u)) <= cfg.mean_band + 1e-15
            assert dist_V(u, zero, DW) <= cfg.radius * (1 + 1e-12)

    def test_singular_members_stay_inside(self):
        grid = Grid(1, 32, 3.0)
        for u in generate_ensemble(small_config(count=10, radius=5.0), Logarithmic(), grid):
            assert np.max(np.abs(u.values)) < 1.0

    def test_deterministic_and_prefix_stable(self):
        grid = Grid(1, 24, 2.0)
        a = generate_ensemble(small_config(), DW, grid)
        b = generate_ensemble(small_config(), DW, grid)
        c = generate_ensemble(small_config(count=3), DW, grid)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u.values, v.values)
        # spawned child seeds do not depend on the ensemble size
        for u, v in zip(a, c):
            np.testing.assert_array_equal(u.values, v.values)
        other = generate_ensemble(small_config(seed=4), DW, grid)
        assert not np.array_equal(a[0].values, other[0].values)

    def test_radius_infeasible(self):
        with pytest.raises(RadiusInfeasible):
            generate_ensemble(small_config(radius=0.01, mean_band=0.9), DW, Grid(1, 16, 2.0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            small_config(count=0)
        with pytest.raises(ValueError):
            small_config(sample_times=(0.2, 0.1))
        with pytest.raises(ValueError):
            small_config(metric="L1")


class TestCovering:
    def test_examples(self):
        pts = np.array([0.0, 0.1, 1.0, 1.05, 3.0])
        d = np.abs(pts[:, None] - pts[None, :])
        assert covering_number(d, 0.2) == 3
        assert covering_number(d, 10.0) == 1
        assert covering_number(d, 0.0) == 5
        assert covering_number(np.zeros((4, 4)), 0.0) == 1

    def test_pairwise_matrix(self):
        g = Grid(1, 8, 1.0)
        states = [g.constant(c) for c in (0.0, 0.3, -0.2)]
        d = pairwise_distances(states, DW, metric="H")
        np.testing.assert_allclose(d, np.abs(np.subtract.outer([0.0, 0.3, -0.2], [0.0, 0.3, -0.2])),
                                   atol=1e-15)


class TestRun:
    def test_mismatched_sampling(self):
        with pytest.raises(MismatchedSampling):
            run_ensemble(small_config(sample_times=(0.13,)), Grid(1, 16, 2.0), DW, SINE, workers=1)

    def test_worker_count(self, monkeypatch):
        monkeypatch.setenv("MOBCH_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("MOBCH_THREADS", "0")
        assert worker_count() == 1
        monkeypatch.delenv("MOBCH_THREADS")
        assert worker_count() >= 1

    def test_pool_matches_serial(self):
        grid = Grid(1, 16, 2.0)
        cfg = small_config(count=3)
        serial = run_ensemble(cfg, grid, DW, SINE, workers=1)
        pooled = run_ensemble(cfg, grid, DW, SINE, workers=2)
        for a, b in zip(serial, pooled):
            np.testing.assert_array_equal(a.states[-1].u.values, b.states[-1].u.values)

    def test_probe_report_shape(self):
        grid = Grid(1, 16, 2.0)
        cfg = small_config(count=4)
        trajs = run_ensemble(cfg, grid, DW, SINE, workers=1)
        rep = compactness_probe(trajs, cfg, DW, SINE)
        assert len(rep.rows()) == len(cfg.sample_times) * len(cfg.rho_ladder)
        for t in cfg.sample_times:
            counts = rep.covering[t]
            # covering numbers never increase with the radius
            by_radius = [c for _, c in sorted(zip(rep.rhos, counts))]
            assert all(a >= b for a, b in zip(by_radius, by_radius[1:]))
            assert 1 <= min(counts) and max(counts) <= cfg.count


class TestResidual:
    def test_constant_state_has_zero_residual(self):
        g = Grid(1, 8, 1.0)
        state = StepState(g.constant(0.2), g.constant(-0.19), 0.0, 0)
        assert steady_state_residual(state, SINE) == 0.0

    def test_members_relax_to_steady_states(self, ensemble_eps0):
        _, trajs = ensemble_eps0
        final = [steady_state_residual(t.states[-1], SINE) for t in trajs]
        assert max(final) <= 1e-4
