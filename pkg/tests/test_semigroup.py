import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import periodic_convolve, theta_heat_kernel
from qlspde.coefficients import builtin
from qlspde.semigroup import (
    EllipticityError,
    HeatSemigroup,
    apply,
    check_ellipticity,
    estimate_semigroup_constants,
    mollify_matrix,
    regularized_diffusion,
)
from qlspde.torus import MatrixField, ScalarField, TorusGrid, lp_norm, norm

TWO_PI = 2 * np.pi
seeds = st.integers(0, 2**32 - 1)
eps_values = st.sampled_from([0.0, 1e-3, 0.01, 0.1, 1.0])


def random_field(grid, seed):
    return ScalarField(grid, np.random.default_rng(seed).standard_normal(grid.shape))


class TestMultiplier:
    def test_properties(self, grid64):
        m = HeatSemigroup(0.01, grid64).multiplier
        assert m[0] == 1.0
        assert np.all((m > 0) & (m <= 1))
        k = np.abs(grid64.wavenumbers[0])
        order = np.argsort(k, kind="stable")
        assert np.all(np.diff(m[order]) <= 0)

    @pytest.mark.parametrize("eps", [-1.0, np.inf, np.nan])
    def test_rejects_bad_eps(self, grid16, eps):
        with pytest.raises(ValueError):
            HeatSemigroup(eps, grid16)

    def test_kernel_resolution_flag(self, grid64):
        assert HeatSemigroup(0.01, grid64).kernel_min >= -1e-12
        assert HeatSemigroup(1e-6, grid64).kernel_min < 0


class TestApply:
    def test_constant_unchanged(self, grid64):
        f = ScalarField.constant(grid64, 1.3)
        assert np.abs(apply(HeatSemigroup(0.3, grid64), f).values - 1.3).max() < 1e-15

    def test_cosine_damping(self, grid64):
        f = ScalarField.from_function(grid64, lambda x: np.cos(TWO_PI * x))
        out = apply(HeatSemigroup(0.1, grid64), f)
        factor = np.exp(-0.4 * np.pi**2)
        assert factor == pytest.approx(0.019296, abs=5e-7)
        np.testing.assert_allclose(out.values, factor * f.values, atol=1e-15)

    def test_zero_is_identity(self, grid64):
        f = random_field(grid64, 0)
        assert np.abs(apply(HeatSemigroup(0.0, grid64), f).values - f.values).max() <= 1e-15

    def test_grid_mismatch(self, grid16, grid64):
        with pytest.raises(ValueError):
            apply(HeatSemigroup(0.1, grid16), ScalarField.constant(grid64, 1))

    def test_matches_kernel_convolution(self):
        g = TorusGrid(1, 32)
        f = random_field(g, 1).values
        eps = 0.01
        direct = periodic_convolve(f, theta_heat_kernel(32, eps))
        np.testing.assert_allclose(HeatSemigroup(eps, g).smooth(f), direct, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seeds, eps_values, eps_values)
    def test_semigroup_law(self, seed, e1, e2):
        g = TorusGrid(1, 64)
        f = random_field(g, seed)
        two = apply(HeatSemigroup(e1, g), apply(HeatSemigroup(e2, g), f)).values
        one = apply(HeatSemigroup(e1 + e2, g), f).values
        assert np.abs(two - one).max() <= 1e-12 * np.abs(f.values).max()

    @settings(max_examples=40, deadline=None)
    @given(seeds, eps_values)
    def test_mean_and_contraction(self, seed, eps):
        g = TorusGrid(1, 64)
        f = random_field(g, seed)
        out = apply(HeatSemigroup(eps, g), f)
        assert abs(out.mean() - f.mean()) <= 1e-14
        assert norm(out, "H") <= norm(f, "H") * (1 + 1e-14)
        if eps == 0 or HeatSemigroup(eps, g).kernel_min >= 0:
            for p in (1, np.inf):
                assert lp_norm(out, p) <= lp_norm(f, p) * (1 + 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.sampled_from([0.0, 1e-3, 0.01, 0.1]))
    def test_positivity(self, seed, eps):
        g = TorusGrid(1, 64)
        f = ScalarField(g, np.random.default_rng(seed).exponential(size=64))
        assert apply(HeatSemigroup(eps, g), f).values.min() >= -1e-12

    def test_2d(self):
        g = TorusGrid(2, 16)
        f = ScalarField.from_function(g, lambda x, y: np.cos(TWO_PI * x) * np.cos(TWO_PI * y))
        out = apply(HeatSemigroup(0.01, g), f)
        np.testing.assert_allclose(out.values, np.exp(-0.08 * np.pi**2) * f.values, atol=1e-15)


class TestMollify:
    def test_constant_matrix(self):
        g = TorusGrid(2, 8)
        M0 = np.array([[2.0, 0.3], [0.3, 1.0]])
        vals = np.broadcast_to(M0[:, :, None, None], (2, 2, 8, 8))
        out = mollify_matrix(HeatSemigroup(0.2, g), MatrixField(g, vals, symmetric=True))
        assert np.abs(out.values - vals).max() < 1e-14
        assert out.symmetric

    def test_kernel_oracle(self):
        g = TorusGrid(1, 32)
        a = lambda y: 1 + 0.4 * np.sin(y)  # noqa: E731
        u = np.sin(TWO_PI * g.coords()[0])
        M = MatrixField(g, a(u)[None, None], symmetric=True)
        eps = 0.01
        out = mollify_matrix(HeatSemigroup(eps, g), M).values[0, 0]
        direct = periodic_convolve(a(u), theta_heat_kernel(32, eps))
        assert np.abs(out - direct).max() <= 1e-8

    def test_large_eps_gives_mean(self, grid64):
        v = np.random.default_rng(2).standard_normal(64)
        out = mollify_matrix(HeatSemigroup(10.0, grid64), MatrixField(grid64, v[None, None]))
        assert np.abs(out.values - v.mean()).max() <= 1e-10


class TestRegularizedDiffusion:
    def test_constant_diffusion(self, grid64):
        c = builtin("frozen", {"a": 0.7})
        u = random_field(grid64, 3)
        out = regularized_diffusion(HeatSemigroup(0.05, grid64), c, u)
        assert np.abs(out.values - 0.7).max() < 1e-14

    def test_eps_zero_pointwise(self, grid64):
        c = builtin("trig")
        u = random_field(grid64, 4)
        out = regularized_diffusion(HeatSemigroup(0.0, grid64), c, u)
        np.testing.assert_array_equal(out.values[0, 0], 1 + 0.5 * np.sin(u.values))

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.sampled_from([0.0, 0.01, 0.1]), st.floats(0.1, 20.0))
    def test_ellipticity_window(self, seed, eps, amp):
        g = TorusGrid(1, 64)
        c = builtin("trig")
        u = ScalarField(g, amp * np.random.default_rng(seed).standard_normal(64))
        lo, hi = regularized_diffusion(HeatSemigroup(eps, g), c, u).eigenvalue_range()
        assert lo >= 0.5 - 1e-10 and hi <= 1.5 + 1e-10

    def test_2d_rational(self):
        g = TorusGrid(2, 16)
        c = builtin("rational", dim=2)
        u = ScalarField(g, 3 * np.random.default_rng(5).standard_normal((16, 16)))
        lo, hi = regularized_diffusion(HeatSemigroup(0.01, g), c, u).eigenvalue_range()
        assert lo >= c.delta - 1e-10 and hi <= c.C_A + 1e-10

    def test_violation_is_fatal(self):
        pts = np.full((4, 1, 1), 0.4)
        with pytest.raises(EllipticityError):
            check_ellipticity(pts, 0.5, 1.5)
        assert check_ellipticity(np.full((4, 1, 1), 0.5 - 1e-11), 0.5, 1.5)[0] < 0.5


class TestConstants:
    def test_single_mode_closed_form(self, grid64):
        eps = 0.01
        f = ScalarField.from_function(grid64, lambda x: np.sqrt(2) * np.cos(TWO_PI * x))
        assert norm(f, "H") == pytest.approx(1.0, rel=1e-14)
        sup = lp_norm(apply(HeatSemigroup(eps, grid64), f), np.inf)
        assert sup == pytest.approx(np.sqrt(2) * np.exp(-4 * np.pi**2 * eps), rel=1e-14)

    def test_c_eps_is_kernel_bound(self, grid64):
        res = estimate_semigroup_constants(grid64, 0.5, eps_values=[1e-3, 1e-2, 1e-1])
        lam = grid64.laplacian_symbol
        w = grid64.rfft_weights
        for eps, val in res.C_eps.items():
            bound = np.sqrt(np.sum(w * np.exp(-2 * eps * lam)))
            assert val == pytest.approx(bound, rel=1e-10)
        assert res.C_eps[1e-3] > res.C_eps[1e-2] > res.C_eps[1e-1]

    def test_zero_difference_excluded(self, grid64):
        res = estimate_semigroup_constants(grid64, 0.5, eps_values=[0.01],
                                           differences=[0.0] + list(np.logspace(-4, -1, 8)))
        assert len(res.differences) == 8

    def test_positive_exponent(self):
        res = estimate_semigroup_constants(TorusGrid(1, 128), 0.5)
        assert res.alpha_eta > 0
        assert np.isfinite(res.r_squared)
        assert res.reliable == (res.r_squared >= 0.9)

    def test_eta_range(self, grid16):
        with pytest.raises(ValueError):
            estimate_semigroup_constants(grid16, 1.0)
