import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import implicit_heat_factor
from qlspde.coefficients import builtin
from qlspde.noise import generate
from qlspde.semigroup import HeatSemigroup
from qlspde.solver import (
    ENERGY_COLUMNS,
    SolverConfig,
    StabilityError,
    apply_drift,
    export_trajectory,
    integrate,
    integrate_batch,
    project_to_band,
    stability_limit,
    step,
)
from qlspde.torus import ScalarField, TorusGrid, norm, read_field

TWO_PI = 2 * np.pi


def sine(grid, k=1, amp=1.0):
    return ScalarField.from_function(grid, lambda x: amp * np.sin(TWO_PI * k * x))


def heat_run(dt=1e-4, T=0.1, n=64, **kw):
    g = TorusGrid(1, n)
    c = builtin("frozen", {"a": 1.0, "s": 0.0})
    cfg = SolverConfig.build(c, eps=0.0, dt=dt, T=T, grid=g, **kw)
    path = generate(0, cfg.K, dt, cfg.steps)
    return c, cfg, integrate(c, cfg, sine(g), path)


class TestConfig:
    def test_theta_defaults_to_delta(self, grid64):
        cfg = SolverConfig.build(builtin("trig"), eps=0.01, dt=1e-5, T=0.01, grid=grid64)
        assert cfg.theta_split == 0.5
        assert cfg.steps == 1000

    def test_stability_enforced(self, grid64):
        limit = stability_limit(grid64, 1.5, 0.5)
        assert limit == pytest.approx(0.25 / 64**2)
        SolverConfig.build(builtin("trig"), eps=0.0, dt=limit, T=0.01, grid=grid64)
        with pytest.raises(StabilityError):
            SolverConfig.build(builtin("trig"), eps=0.0, dt=1.01 * limit, T=0.01, grid=grid64)

    def test_frozen_unbounded(self, grid64):
        assert stability_limit(grid64, 1.0, 1.0) == np.inf
        SolverConfig.build(builtin("frozen"), eps=0.0, dt=0.1, T=1.0, grid=grid64)

    def test_theta_above_delta(self, grid64):
        with pytest.raises(ValueError):
            SolverConfig.build(builtin("trig"), eps=0.0, dt=1e-6, T=0.01, grid=grid64, theta_split=0.6)

    @pytest.mark.parametrize("kw", [dict(eps=-1.0), dict(dt=0.0), dict(T=0.0), dict(K=0),
                                    dict(snapshot_stride=0)])
    def test_field_checks(self, grid16, kw):
        args = dict(eps=0.0, dt=0.1, T=1.0, grid=grid16) | kw
        with pytest.raises(ValueError):
            SolverConfig(**args)


class TestDrift:
    def test_constant_state(self, grid64):
        for name in ("trig", "rational", "frozen"):
            out = apply_drift(builtin(name), HeatSemigroup(0.01, grid64), ScalarField.constant(grid64, 0.8))
            assert np.abs(out.values).max() < 1e-13

    def test_frozen_is_laplacian(self, grid64):
        u = sine(grid64)
        out = apply_drift(builtin("frozen"), HeatSemigroup(0.05, grid64), u)
        np.testing.assert_allclose(out.values, -4 * np.pi**2 * u.values, atol=1e-10)

    def test_resolution_convergence(self):
        c = builtin("trig")
        coarse, fine = TorusGrid(1, 64), TorusGrid(1, 128)
        a = apply_drift(c, HeatSemigroup(0.01, coarse), sine(coarse))
        b = apply_drift(c, HeatSemigroup(0.01, fine), sine(fine))
        ah = np.fft.rfft(a.values) / 64
        bh = np.fft.rfft(b.values)[:33] / 128
        band = np.arange(33) < 64 / 3
        assert np.abs(ah[band] - bh[band]).max() <= 1e-8

    def test_range_flag(self, grid16):
        with pytest.warns(UserWarning, match="clip_R"):
            apply_drift(builtin("trig"), HeatSemigroup(0.0, grid16), ScalarField.constant(grid16, 60.0),
                        clip_R=50.0)

    def test_2d_separable(self):
        g = TorusGrid(2, 16)
        u = ScalarField.from_function(g, lambda x, y: np.sin(TWO_PI * x) + np.cos(TWO_PI * 2 * y))
        out = apply_drift(builtin("frozen", dim=2), HeatSemigroup(0.0, g), u)
        x, y = g.coords()
        exact = -4 * np.pi**2 * np.sin(TWO_PI * x) - 16 * np.pi**2 * np.cos(TWO_PI * 2 * y)
        np.testing.assert_allclose(out.values, exact, atol=1e-9)


class TestStep:
    def test_implicit_heat_recursion(self):
        c, cfg, traj = heat_run(dt=1e-3, T=0.01)
        u = traj.initial
        P = HeatSemigroup(0.0, cfg.grid)
        path = traj.path
        for m in range(10):
            u = step(c, P, u, path, m, cfg)
            exact = implicit_heat_factor(4 * np.pi**2, cfg.dt, m + 1) * np.sin(TWO_PI * cfg.grid.coords()[0])
            assert np.abs(u.values - exact).max() <= 1e-13
        np.testing.assert_allclose(u.values, traj.final.values, atol=1e-15)

    def test_constant_fixed_point(self, grid64):
        c = builtin("frozen", {"a": 1.0, "b": 0.4, "s": 0.0})
        cfg = SolverConfig.build(c, eps=0.0, dt=1e-3, T=0.05, grid=grid64)
        traj = integrate(c, cfg, ScalarField.constant(grid64, 0.7), generate(0, cfg.K, 1e-3, cfg.steps))
        assert np.abs(traj.fields - 0.7).max() <= 1e-15

    def test_strong_refinement(self):
        g = TorusGrid(1, 64)
        c = builtin("trig", {"s": 0.5})
        dt = 2e-5
        fine_path = generate(21, 32, dt / 2, 2000)
        u0 = sine(g)
        errs = []
        ref = integrate(c, SolverConfig.build(c, eps=0.01, dt=dt / 2, T=0.02, grid=g), u0, fine_path).final
        for f in (2, 4, 8):
            p = fine_path.coarsen(f)
            cfg = SolverConfig.build(c, eps=0.01, dt=p.dt, T=0.02, grid=g) if p.dt <= stability_limit(g, 1.5, 0.5) else None
            if cfg is None:
                break
            errs.append(norm(integrate(c, cfg, u0, p).final - ref, "H"))
        assert len(errs) >= 2
        orders = np.log2(np.array(errs[1:]) / np.array(errs[:-1]))
        assert np.all(orders >= 0.4)


class TestIntegrate:
    def test_heat_closed_form(self):
        _, cfg, traj = heat_run()
        exact = implicit_heat_factor(4 * np.pi**2, 1e-4, 1000) * np.sin(TWO_PI * cfg.grid.coords()[0])
        assert np.abs(traj.final.values - exact).max() <= 1e-8

    def test_trajectory_invariants(self):
        _, cfg, traj = heat_run(dt=1e-3, T=0.0503, snapshot_stride=7)
        assert traj.times[0] == 0.0
        assert np.all(np.diff(traj.times) > 0)
        assert abs(traj.times[-1] - cfg.T) <= cfg.dt / 2
        np.testing.assert_array_equal(traj.initial.values, sine(cfg.grid).values)
        assert np.all(np.diff(traj.energy.h1_integral) >= 0)
        assert len(traj.energy.h_norm_sq) == cfg.steps + 1

    def test_deterministic(self, grid64):
        c = builtin("trig")
        cfg = SolverConfig.build(c, eps=0.01, dt=5e-5, T=0.01, grid=grid64)
        a = integrate(c, cfg, sine(grid64), generate(3, 32, 5e-5, cfg.steps))
        b = integrate(c, cfg, sine(grid64), generate(3, 32, 5e-5, cfg.steps))
        assert a.checksum() == b.checksum()
        assert np.array_equal(a.fields, b.fields)

    def test_batch_equals_single(self, grid64):
        c = builtin("trig")
        cfg = SolverConfig.build(c, eps=0.01, dt=5e-5, T=0.005, grid=grid64, snapshot_stride=10)
        paths = [generate(s, 32, 5e-5, cfg.steps) for s in range(3)]
        u0s = [sine(grid64, amp=a) for a in (0.5, 1.0, 2.0)]
        eps = [0.02, 0.01, 0.0]
        batch = integrate_batch(c, cfg, u0s, paths, eps_values=eps)
        for b in range(3):
            single = integrate(c, cfg.with_(eps=eps[b]), u0s[b], paths[b])
            np.testing.assert_allclose(batch[b].fields, single.fields, rtol=0, atol=1e-13)
            assert batch[b].config.eps == eps[b]

    def test_eps_coupling(self, grid64):
        c = builtin("trig")
        cfg = SolverConfig.build(c, eps=0.0, dt=5e-5, T=0.005, grid=grid64)
        p = generate(4, 32, 5e-5, cfg.steps)
        trajs = integrate_batch(c, cfg, sine(grid64), [p, p], eps_values=[0.02, 0.005])
        assert trajs[0].noise_checksum == trajs[1].noise_checksum == p.checksum
        assert not np.array_equal(trajs[0].final.values, trajs[1].final.values)

    def test_frozen_independent_of_eps(self, grid64):
        c = builtin("frozen", {"s": 0.3})
        cfg = SolverConfig.build(c, eps=0.0, dt=1e-4, T=0.01, grid=grid64)
        p = generate(5, 32, 1e-4, cfg.steps)
        a, b = integrate_batch(c, cfg, sine(grid64), [p, p], eps_values=[0.0, 0.05])
        np.testing.assert_allclose(a.fields, b.fields, atol=1e-14)

    def test_path_checks(self, grid64):
        c = builtin("trig")
        cfg = SolverConfig.build(c, eps=0.0, dt=5e-5, T=0.005, grid=grid64)
        with pytest.raises(ValueError, match="dt"):
            integrate(c, cfg, sine(grid64), generate(0, 32, 1e-5, 1000))
        with pytest.raises(ValueError, match="steps"):
            integrate(c, cfg, sine(grid64), generate(0, 32, 5e-5, 10))
        with pytest.raises(ValueError, match="modes"):
            integrate(c, cfg, sine(grid64), generate(0, 4, 5e-5, cfg.steps))

    def test_band_projection_warns(self, grid64):
        u = sine(grid64, k=30)
        with pytest.warns(UserWarning, match="band"):
            out = project_to_band(u)
        assert np.abs(out.values).max() < 1e-13

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 3.0))
    def test_discrete_energy_inequality(self, seed, amp):
        from qlspde.diagnostics import energy_inequality_constant

        g = TorusGrid(1, 64)
        c = builtin("trig", {"s": 0.0})
        rng = np.random.default_rng(seed)
        coeffs = rng.standard_normal(8) / (1 + np.arange(8))
        x = g.coords()[0]
        u0 = ScalarField(g, amp * sum(a * np.sin(TWO_PI * (k + 1) * x) for k, a in enumerate(coeffs)))
        cfg = SolverConfig.build(c, eps=0.01, dt=5e-5, T=0.01, grid=g)
        traj = integrate(c, cfg, u0, generate(0, 32, 5e-5, cfg.steps))
        C = energy_inequality_constant(traj, c.delta)
        assert np.isfinite(C) and C >= 0


class TestExport:
    def test_files(self, tmp_path):
        _, cfg, traj = heat_run(dt=1e-3, T=0.01, snapshot_stride=5)
        out = export_trajectory(traj, tmp_path, "heat")
        lines = (out / "heat_energy.csv").read_text().splitlines()
        assert lines[0] == ",".join(ENERGY_COLUMNS)
        assert len(lines) == cfg.steps + 2
        snaps = sorted((out / "heat_snapshots").iterdir())
        assert len(snaps) == len(traj.times)
        np.testing.assert_array_equal(read_field(snaps[-1]).values, traj.final.values)
        manifest = (out / "heat_manifest.txt").read_text()
        assert f"noise_checksum = {traj.noise_checksum:016x}" in manifest
