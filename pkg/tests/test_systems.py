"""System presets, noise moment providers, and conditional expectations."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from iocnoisy.polybasis import enumerate_indices
from iocnoisy.systems import (
    BoxSpace,
    CostParams,
    NoiseModel,
    TEMP_ENV,
    TruncatedGaussian,
    conditional_moment_matrix,
    conditional_poly_expectation,
    gaussian_moments_1d,
    make_linear_system,
    make_temperature_system,
    noise_moment,
    sample_truncated_gaussian,
    step,
    temperature_physical_step,
    truncated_gaussian_moments_1d,
)

from conftest import with_tiny_noise


def quadrature_gaussian_moment(mean, std, k):
    val, _ = quad(lambda v: v ** k * norm.pdf(v, mean, std), mean - 12 * std, mean + 12 * std)
    return val


def quadrature_truncated_moment(mean, std, lo, hi, k):
    z = norm.cdf(hi, mean, std) - norm.cdf(lo, mean, std)
    val, _ = quad(lambda v: v ** k * norm.pdf(v, mean, std) / z, lo, hi)
    return val


class TestNoiseMoments:
    def test_gaussian_second_moment(self):
        model = NoiseModel(kind="gaussian", mean=[0.0], std=[0.05], max_degree=4)
        assert noise_moment(model, [2]) == pytest.approx(0.0025, rel=1e-12)
        assert noise_moment(model, [2]) == pytest.approx(
            quadrature_gaussian_moment(0.0, 0.05, 2), rel=1e-9
        )

    def test_gaussian_fourth_moment(self):
        model = NoiseModel(kind="gaussian", mean=[0.0], std=[0.05], max_degree=4)
        assert noise_moment(model, [4]) == pytest.approx(1.875e-5, rel=1e-12)
        assert noise_moment(model, [4]) == pytest.approx(
            quadrature_gaussian_moment(0.0, 0.05, 4), rel=1e-9
        )

    def test_zero_mean_odd_moments_vanish(self):
        for kind, kw in [("gaussian", {}), ("truncated_gaussian", {"bound": 0.1})]:
            model = NoiseModel(kind=kind, mean=[0.0, 0.0], std=[0.05, 0.02], max_degree=5, **kw)
            assert noise_moment(model, [1, 0]) == pytest.approx(0.0, abs=1e-15)
            assert noise_moment(model, [3, 0]) == pytest.approx(0.0, abs=1e-15)

    def test_zero_index_is_one(self):
        model = NoiseModel(kind="gaussian", mean=[0.1], std=[0.3], max_degree=3)
        assert noise_moment(model, [0]) == 1.0

    def test_degree_overflow_rejected(self):
        model = NoiseModel(kind="gaussian", mean=[0.0], std=[0.05], max_degree=2)
        with pytest.raises(ValueError):
            noise_moment(model, [3])

    def test_degenerate_std_rejected(self):
        with pytest.raises(ValueError):
            NoiseModel(kind="gaussian", mean=[0.0], std=[0.0], max_degree=2)

    @given(st.integers(2, 8))
    @settings(max_examples=10, deadline=None)
    def test_gaussian_recursion(self, k):
        m = gaussian_moments_1d(0.0, 0.07, k)
        assert m[k] == pytest.approx((k - 1) * 0.07 ** 2 * m[k - 2], rel=1e-12)

    def test_truncated_moments_match_quadrature(self):
        mean, std, bound = 0.02, 0.05, 0.1
        m = truncated_gaussian_moments_1d(mean, std, mean - bound, mean + bound, 6)
        for k in range(7):
            assert m[k] == pytest.approx(
                quadrature_truncated_moment(mean, std, mean - bound, mean + bound, k),
                rel=1e-8, abs=1e-14,
            )

    def test_product_over_axes(self):
        model = NoiseModel(kind="gaussian", mean=[0.0, 0.0], std=[0.05, 0.1], max_degree=4)
        assert noise_moment(model, [2, 2]) == pytest.approx(0.0025 * 0.01, rel=1e-12)

    def test_marginal(self):
        model = NoiseModel(kind="gaussian", mean=[0.0, 1.0, 2.0], std=[0.1, 0.2, 0.3], max_degree=3)
        marg = model.marginal([0, 2])
        assert marg.dim == 2
        assert noise_moment(marg, [0, 1]) == pytest.approx(2.0)


class TestTruncatedSampling:
    def test_large_bound_matches_untruncated_moments(self):
        dist = TruncatedGaussian(mean=[0.0], std=[0.1], bound=1.0)  # 10 sigma
        rng = np.random.default_rng(7)
        draws = sample_truncated_gaussian(dist, rng, 1_000_000)[:, 0]
        for k, exact in [(2, 0.01), (4, 3 * 0.1 ** 4)]:
            se = np.std(draws ** k) / np.sqrt(draws.size)
            assert abs(np.mean(draws ** k) - exact) <= 3 * se

    def test_degenerate_std_returns_mean(self):
        dist = TruncatedGaussian(mean=[0.4], std=[1e-12], bound=1e-6)
        s = sample_truncated_gaussian(dist, np.random.default_rng(0))
        np.testing.assert_allclose(s, [0.4], atol=1e-9)

    def test_all_samples_inside_bounds(self):
        dist = TruncatedGaussian(mean=[0.1, -0.2], std=[0.5, 0.5], bound=0.3)
        draws = sample_truncated_gaussian(dist, np.random.default_rng(1), 5000)
        assert np.all(np.abs(draws - dist.mean) <= dist.bound)


class TestStep:
    def test_equilibrium_fixed_point(self, linear_model):
        model = with_tiny_noise(linear_model)
        nxt = step(model, np.zeros(2), np.zeros(1), np.random.default_rng(0))
        np.testing.assert_allclose(nxt, np.zeros(2), atol=1e-9)

    def test_linear_matrices(self, linear_model):
        model = with_tiny_noise(linear_model)
        nxt = step(model, np.array([1.0, 0.0]), np.array([1.0]), np.random.default_rng(0))
        np.testing.assert_allclose(nxt, [1.0, 0.1], atol=1e-9)

    def test_temperature_power_balance(self, temperature_model):
        # at T = T_env all losses vanish, so zero heating power holds the state
        model = with_tiny_noise(temperature_model)
        x_env = (TEMP_ENV - 300.0) / 100.0
        nxt = step(model, np.array([x_env]), np.array([0.0]), np.random.default_rng(0))
        np.testing.assert_allclose(nxt, [x_env], atol=1e-9)

    def test_out_of_space_rejected(self, linear_model):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            step(linear_model, np.array([2.0, 0.0]), np.zeros(1), rng)
        with pytest.raises(ValueError):
            step(linear_model, np.zeros(2), np.array([5.0]), rng)

    def test_seed_determinism(self, linear_model):
        a = step(linear_model, np.zeros(2), np.zeros(1), np.random.default_rng(42))
        b = step(linear_model, np.zeros(2), np.zeros(1), np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)


class TestConditionalExpectation:
    def test_deterministic_linear_first_component(self, linear_model):
        model = with_tiny_noise(linear_model)
        x, a = np.array([0.3, -0.2]), np.array([0.5])
        expected = (model.lin_A @ x + model.lin_B @ a)[0]
        assert conditional_poly_expectation(model, (1, 0), x, a) == pytest.approx(
            expected, abs=1e-9
        )

    def test_zero_index_normalization(self, linear_model):
        assert conditional_poly_expectation(
            linear_model, (0, 0), np.zeros(2), np.zeros(1)
        ) == pytest.approx(1.0)

    def test_second_moment_against_monte_carlo(self, linear_model):
        x, a = np.array([0.2, 0.1]), np.array([-0.3])
        exact = conditional_poly_expectation(linear_model, (2, 0), x, a)
        rng = np.random.default_rng(5)
        w = sample_truncated_gaussian(linear_model.process_noise, rng, 1_000_000)
        drift = linear_model.drift(x, a)
        samples = (drift[0] + w[:, 0]) ** 2
        se = samples.std() / np.sqrt(samples.size)
        assert abs(exact - samples.mean()) <= 3 * se

    def test_matrix_matches_scalar(self, temperature_model):
        r_iset = enumerate_indices(1, 3)
        pts = np.array([[0.2, -0.5], [-0.7, 0.9], [0.0, 0.0]])
        G = conditional_moment_matrix(temperature_model, r_iset, pts)
        for j, pt in enumerate(pts):
            for i, e in enumerate(r_iset.exponents):
                scalar = conditional_poly_expectation(
                    temperature_model, tuple(e), pt[:1], pt[1:]
                )
                assert G[j, i] == pytest.approx(scalar, rel=1e-10, abs=1e-12)


class TestPresets:
    def test_linear_shapes(self, linear_model):
        assert (linear_model.n_x, linear_model.n_a, linear_model.n_ell) == (2, 1, 3)
        np.testing.assert_allclose(linear_model.lin_A, [[1.0, 0.1], [0.0, 1.0]])
        np.testing.assert_allclose(linear_model.lin_B, [[0.0], [0.1]])
        assert linear_model.discount == 0.9

    def test_linear_features_are_squares(self, linear_model):
        x, a = np.array([0.3, -0.4]), np.array([0.2])
        np.testing.assert_allclose(
            linear_model.features(x, a), [0.09, 0.16, 0.04], atol=1e-14
        )

    def test_temperature_drift_degrees(self, temperature_model):
        exps = temperature_model.drift_iset.exponents
        nz = temperature_model.drift_coeffs[0] != 0
        assert exps[nz, 0].max() == 4  # quartic radiation term in the state
        assert exps[nz, 1].max() == 1  # linear in the action

    def test_temperature_reference_features(self, temperature_model):
        # features vanish at their own reference points
        f_at_ref = temperature_model.features(np.array([0.75]), np.array([-1.0]))
        np.testing.assert_allclose(f_at_ref, [0.0, 0.0], atol=1e-14)
        f = temperature_model.features(np.array([0.25]), np.array([0.0]))
        np.testing.assert_allclose(f, [0.25, 1.0], atol=1e-14)

    def test_temperature_drift_matches_physical_model(self, temperature_model):
        rng = np.random.default_rng(0)
        xs = rng.uniform(-1, 1, 100)
        us = rng.uniform(-1, 1, 100)
        drift = temperature_model.drift(xs[:, None], us[:, None])[:, 0]
        ref = np.array(
            [
                (temperature_physical_step(100 * x + 300.0, 1000.0 * u) - 300.0) / 100.0
                for x, u in zip(xs, us)
            ]
        )
        np.testing.assert_allclose(drift, ref, atol=1e-12)

    def test_temperature_drift_stays_bounded(self, temperature_model):
        g = np.linspace(-1, 1, 101)
        X, U = np.meshgrid(g, g, indexing="ij")
        nxt = temperature_model.drift(X.ravel()[:, None], U.ravel()[:, None])
        assert np.all(np.abs(nxt) <= 1.1)


class TestBoxAndCost:
    def test_box_validation(self):
        with pytest.raises(ValueError):
            BoxSpace(lo=[1.0], hi=[0.0])

    def test_box_contains_and_clip(self):
        box = BoxSpace(lo=[-1.0, 0.0], hi=[1.0, 2.0])
        assert box.contains([0.5, 1.0])
        assert not box.contains([1.5, 1.0])
        np.testing.assert_allclose(box.clip([3.0, -1.0]), [1.0, 0.0])

    def test_cost_normalization(self):
        c = CostParams(np.array([3.0, 4.0]))
        np.testing.assert_allclose(c.normalized(), [0.6, 0.8])

    def test_cost_rejects_nan(self):
        with pytest.raises(ValueError):
            CostParams(np.array([np.nan, 1.0]))
