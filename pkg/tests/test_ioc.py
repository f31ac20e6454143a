"""Program assembly, sum-of-squares nonnegativity, and cost recovery."""

import dataclasses

import cvxpy as cp
import numpy as np
import pytest

from iocnoisy.experiments import (
    ExperimentConfig,
    generate_dataset,
    recover_cost,
    sample_true_cost,
    trial_rng,
)
from iocnoisy.ioc import (
    DEFAULT_BETA_ELL,
    DEFAULT_BETA_V,
    IocProgram,
    assemble_program,
    build_approx_matrices,
    default_basis,
    encode_nonnegativity,
    slackness_report,
    solve_ioc,
)
from iocnoisy.moments import MomentVector
from iocnoisy.polybasis import change_of_basis, enumerate_indices, eval_basis
from iocnoisy.systems import CostParams, conditional_moment_matrix, make_linear_system


class TestApproxMatrices:
    def test_h_reproduces_features(self, linear_model):
        basis = default_basis(linear_model, 2)
        A = build_approx_matrices(linear_model, basis, 2)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (30, 3))
        interp = eval_basis(basis, pts) @ A.H
        exact = linear_model.features(pts[:, :2], pts[:, 2:])
        np.testing.assert_allclose(interp, exact, atol=1e-8)

    def test_g1_evaluates_state_monomials(self, linear_model):
        basis = default_basis(linear_model, 2)
        A = build_approx_matrices(linear_model, basis, 2)
        r_iset = enumerate_indices(2, 2)
        np.testing.assert_allclose(
            A.G1, r_iset.eval_monomials(basis.nodes[:, :2]), atol=1e-12
        )

    def test_constant_value_basis(self, linear_model):
        basis = default_basis(linear_model, 2)
        A = build_approx_matrices(linear_model, basis, 0)
        np.testing.assert_allclose(A.G1, np.ones((len(basis), 1)), atol=1e-12)
        np.testing.assert_allclose(A.G2, np.ones((len(basis), 1)), atol=1e-12)

    def test_dynamics_approximation_exact_for_linear(self, linear_model):
        # degree-1 drift composed with degree-2 value monomials stays in the span
        basis = default_basis(linear_model, 4)
        A = build_approx_matrices(linear_model, basis, 2)
        g = np.linspace(-1, 1, 50)
        X1, X2, U = np.meshgrid(g, g, g, indexing="ij")
        pts = np.stack([X1.ravel(), X2.ravel(), U.ravel()], axis=1)
        approx = eval_basis(basis, pts) @ A.G2
        exact = conditional_moment_matrix(linear_model, A.basis_r, pts)
        assert np.max(np.abs(approx - exact)) <= 1e-8

    def test_d_is_box_volume_partition(self, linear_model):
        basis = default_basis(linear_model, 2)
        A = build_approx_matrices(linear_model, basis, 2)
        assert A.d.sum() == pytest.approx(8.0, abs=1e-9)

    def test_degree_and_basis_validation(self, linear_model):
        basis = default_basis(linear_model, 2)
        with pytest.raises(ValueError):
            build_approx_matrices(linear_model, basis, 3)
        from iocnoisy.polybasis import make_monomial_basis

        mono = make_monomial_basis(enumerate_indices(3, 2), [[-1, 1]] * 3)
        with pytest.raises(ValueError):
            build_approx_matrices(linear_model, mono, 2)


def sos_feasibility(model, values_at_nodes, mode="sos"):
    """Check whether the polynomial with the given node values admits a certificate."""
    basis = default_basis(model, 2)
    program = IocProgram(
        Xi_psi=np.zeros((len(basis), 2)),
        d=np.ones(len(basis)),
        m_hat=np.zeros(len(basis)),
        n_ell=1,
        beta_ell=1.0,
        beta_V=1.0,
        nonneg_mode=mode,
        basis_psi=basis,
    )
    theta = cp.Parameter(len(basis))
    theta.value = np.asarray(values_at_nodes, dtype=float)
    prob = cp.Problem(cp.Minimize(0), encode_nonnegativity(program, theta))
    prob.solve(solver="CLARABEL")
    return prob.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)


class TestNonnegativityEncoding:
    def test_constant_one_is_certifiable(self, linear_model):
        basis = default_basis(linear_model, 2)
        assert sos_feasibility(linear_model, np.ones(len(basis)))

    def test_sign_changing_polynomial_rejected(self, linear_model):
        # p(z) = z_1 takes negative values on the box
        basis = default_basis(linear_model, 2)
        assert not sos_feasibility(linear_model, basis.nodes[:, 0])

    def test_box_certificate(self, linear_model):
        # p(z) = 1 - z_1^2 is nonnegative on the box via the box multiplier
        basis = default_basis(linear_model, 2)
        assert sos_feasibility(linear_model, 1.0 - basis.nodes[:, 0] ** 2)

    def test_grid_mode_accepts_grid_nonnegative(self, linear_model):
        basis = default_basis(linear_model, 2)
        assert sos_feasibility(linear_model, 1.0 - basis.nodes[:, 0] ** 2, mode="grid")


@pytest.fixture(scope="module")
def linear_trial():
    cfg = ExperimentConfig(system="linear", trials=1, M=256, N=10, seed=3)
    model = make_linear_system()
    cost = sample_true_cost(model, trial_rng(cfg.seed, 0))
    ds = generate_dataset(cfg, model, cost, 0)
    sol, gmm, program = recover_cost(cfg, model, ds)
    return {"cfg": cfg, "model": model, "cost": cost, "ds": ds,
            "sol": sol, "gmm": gmm, "program": program}


class TestAssembly:
    def test_program_dimensions(self, linear_trial):
        program = linear_trial["program"]
        model = linear_trial["model"]
        D_psi = len(program.basis_psi)
        assert program.Xi_psi.shape == (D_psi, model.n_ell + 6)  # D_V = C(2+2,2)
        assert program.beta_ell == DEFAULT_BETA_ELL
        assert program.beta_V == DEFAULT_BETA_V

    def test_moment_basis_change(self, linear_trial):
        gmm, program = linear_trial["gmm"], linear_trial["program"]
        B = change_of_basis(program.basis_psi).matrix
        np.testing.assert_allclose(program.m_hat, B @ gmm.m_hat.values, atol=1e-12)

    def test_basis_mismatch_rejected(self, linear_model):
        basis = default_basis(linear_model, 2)
        A = build_approx_matrices(linear_model, basis, 2)
        wrong = MomentVector(
            basis=enumerate_indices(3, 3), values=np.ones(len(enumerate_indices(3, 3)))
        )
        with pytest.raises(ValueError):
            assemble_program(A, wrong, 0.9)


class TestSolve:
    def test_recovers_cost_on_default_instance(self, linear_trial):
        sol, cost = linear_trial["sol"], linear_trial["cost"]
        assert sol.status == "optimal"
        err = sol.normalized_theta_ell[:2] - cost.normalized()[:2]
        assert np.max(np.abs(err)) <= 0.05

    def test_feasibility_residuals(self, linear_trial):
        sol, program = linear_trial["sol"], linear_trial["program"]
        assert program.d @ sol.theta_psi >= 1 - 1e-6
        assert np.abs(sol.theta_ell).sum() <= program.beta_ell * (1 + 1e-6)
        assert np.abs(sol.theta_V).sum() <= program.beta_V * (1 + 1e-6)

    def test_objective_bounded_below(self, linear_trial):
        # with estimated moments the pairing can dip slightly below zero
        assert linear_trial["sol"].objective >= -2e-2

    def test_slackness_report_matches_objective(self, linear_trial):
        sol, program, gmm = (
            linear_trial["sol"], linear_trial["program"], linear_trial["gmm"],
        )
        assert slackness_report(sol, program, gmm.m_hat) == pytest.approx(
            sol.objective, abs=1e-9
        )

    def test_grid_and_sos_modes_agree(self, linear_trial):
        cfg = dataclasses.replace(linear_trial["cfg"], nonneg_mode="grid")
        sol_grid, _, _ = recover_cost(cfg, linear_trial["model"], linear_trial["ds"])
        assert sol_grid.status == "optimal"
        sol_sos = linear_trial["sol"]
        gap = np.linalg.norm(sol_grid.normalized_theta_ell - sol_sos.normalized_theta_ell)
        assert gap <= 0.02
        # any finite grid relaxes the certificate, so its optimum is no larger
        assert sol_sos.objective >= sol_grid.objective - 1e-6

    def test_scale_invariance_of_argmin(self, linear_trial):
        model, program, gmm = (
            linear_trial["model"], linear_trial["program"], linear_trial["gmm"],
        )
        basis = program.basis_psi
        A = build_approx_matrices(model, basis, 2)
        scaled = MomentVector(basis=gmm.m_hat.basis, values=2.5 * gmm.m_hat.values)
        sol2 = solve_ioc(assemble_program(A, scaled, model.discount))
        assert sol2.status == "optimal"
        np.testing.assert_allclose(
            sol2.normalized_theta_ell,
            linear_trial["sol"].normalized_theta_ell,
            atol=5e-3,
        )
        assert sol2.objective == pytest.approx(
            2.5 * linear_trial["sol"].objective, rel=1e-3, abs=1e-6
        )

    def test_overtight_bounds_infeasible(self, linear_trial):
        model, gmm = linear_trial["model"], linear_trial["gmm"]
        A = build_approx_matrices(model, default_basis(model, 2), 2)
        program = assemble_program(
            A, gmm.m_hat, model.discount, beta_ell=1e-6, beta_V=1e-6
        )
        assert solve_ioc(program).status == "infeasible"

    def test_invalid_mode_rejected(self, linear_trial):
        model, gmm = linear_trial["model"], linear_trial["gmm"]
        A = build_approx_matrices(model, default_basis(model, 2), 2)
        with pytest.raises(ValueError):
            assemble_program(A, gmm.m_hat, model.discount, mode="magic")
