"""Noise deconvolution and the misspecified GMM moment estimator.

Everything here works in the monomial convention (graded-lex order), where
the deconvolution matrices are lower triangular with unit diagonal.  The
conversion to an interpolation basis happens only at the program-assembly
boundary, via the basis change matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .polybasis import MultiIndexSet, multi_binomial
from .simulate import ObservedDataset
from .systems import NoiseModel, SystemModel, conditional_moment_matrix, noise_moment

MIN_SINGULAR_VALUE = 1e-12


@dataclass(frozen=True)
class MomentVector:
    """Moments of a probability measure in a monomial-convention basis."""

    basis: MultiIndexSet
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != len(self.basis):
            raise ValueError("moment vector length must match basis cardinality")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    @property
    def plus(self) -> np.ndarray:
        """The [1:] slice (zero-order moment dropped)."""
        return self.values[1:]

    def to_dict(self) -> dict:
        return {
            "basis": {
                "dim": self.basis.dimension,
                "degree": self.basis.max_degree,
                "order": "grlex-rightmost",
            },
            "values": self.values.tolist(),
        }


@dataclass(frozen=True)
class DeconvMatrix:
    matrix: np.ndarray
    index_set: MultiIndexSet
    noise: NoiseModel

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        D = len(self.index_set)
        if m.shape != (D, D):
            raise ValueError("deconvolution matrix shape mismatch")
        if not np.allclose(np.diag(m), 1.0) or np.any(np.triu(m, k=1) != 0.0):
            raise ValueError("deconvolution matrix must be unit lower triangular")
        object.__setattr__(self, "matrix", m)
        m.setflags(write=False)


def build_deconv_matrix(index_set: MultiIndexSet, noise: NoiseModel) -> DeconvMatrix:
    """Entry (d, d') = C(d, d') E[v^{d-d'}] below the diagonal, 1 on it, 0 above."""
    if noise.max_degree < index_set.max_degree:
        raise ValueError("noise model provides too few moment degrees")
    exps = index_set.exponents
    D = len(index_set)
    M = np.zeros((D, D))
    for i in range(D):
        M[i, i] = 1.0
        for j in range(i):
            diff = exps[i] - exps[j]
            if np.any(diff < 0):
                continue
            c = multi_binomial(exps[i], exps[j])
            if c:
                M[i, j] = c * noise_moment(noise, diff)
    return DeconvMatrix(matrix=M, index_set=index_set, noise=noise)


def discount_weights(alpha: float, N: int, shifted: bool = False) -> np.ndarray:
    """gamma * alpha^t for t in 0..N-1 (or alpha^{t-1}, t in 1..N); sums to 1."""
    gamma = (1.0 - alpha) / (1.0 - alpha ** N) if alpha != 1.0 else 1.0 / N
    w = gamma * alpha ** np.arange(N)
    return w  # the shifted sum uses the same weights, applied to t = 1..N


def sample_moment_vectors(
    ds: ObservedDataset, index_set_psi: MultiIndexSet, index_set_V: MultiIndexSet, n_x: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-trajectory discounted sample moments (m_i_obs, m_i_obs_xplus).

    Returns arrays of shape (M, D_psi) and (M, D_V).
    """
    obs = ds.observations
    M, T, n = obs.shape
    N = T - 1
    if index_set_psi.dimension != n:
        raise ValueError("psi index set dimension must equal n_x + n_a")
    if index_set_V.dimension != n_x:
        raise ValueError("V index set dimension must equal n_x")
    w = discount_weights(ds.alpha, N)
    y_head = obs[:, :N, :].reshape(M * N, n)
    phi = index_set_psi.eval_monomials(y_head).reshape(M, N, -1)
    m_obs = np.einsum("t,mtd->md", w, phi)
    y_tail_x = obs[:, 1:, :n_x].reshape(M * N, n_x)
    r = index_set_V.eval_monomials(y_tail_x).reshape(M, N, -1)
    m_obs_xplus = np.einsum("t,mtd->md", w, r)
    return m_obs, m_obs_xplus


def dynamics_matrix_monomial(
    model: SystemModel, index_set_psi: MultiIndexSet, index_set_V: MultiIndexSet
) -> np.ndarray:
    """G2 in the monomial convention: Q*r ~= G2_mono^T phi_mono.

    Built by Lagrange interpolation at unisolvent nodes and mapped back with
    the basis change matrix, matching the program-assembly construction.
    """
    from .polybasis import change_of_basis, make_lagrange_basis

    domain = np.concatenate(
        [model.state_space.bounds(), model.action_space.bounds()], axis=0
    )
    basis = make_lagrange_basis(index_set_psi, domain)
    G2_lag = conditional_moment_matrix(model, index_set_V, basis.nodes)
    B = change_of_basis(basis).matrix
    return B.T @ G2_lag


@dataclass(frozen=True)
class GmmProblem:
    Phi: np.ndarray  # ((D_psi-1) + (D_V-1), D_psi-1)
    b_samples: np.ndarray  # (M, rows)
    lam: float
    n_top: int  # D_psi - 1
    n_bottom: int  # D_V - 1
    index_set: MultiIndexSet

    def __post_init__(self):
        smin = np.linalg.svd(self.Phi, compute_uv=False)[-1]
        if smin <= MIN_SINGULAR_VALUE:
            raise ValueError(f"stacked moment matrix rank deficient (sigma_min={smin:.3e})")


@dataclass(frozen=True)
class GmmSolution:
    m_hat: MomentVector
    W_hat: np.ndarray
    objective: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def m_hat_plus(self) -> np.ndarray:
        return self.m_hat.plus


def stack_gmm_problem(
    m_obs: np.ndarray,
    m_obs_xplus: np.ndarray,
    Phi_nu: DeconvMatrix,
    Phi_nux: DeconvMatrix,
    G2_mono: np.ndarray,
    lam: float,
) -> GmmProblem:
    """Stack the observation and dynamics moment blocks, zero-order rows removed."""
    A = Phi_nux.matrix @ G2_mono.T  # (D_V, D_psi)
    top = Phi_nu.matrix
    b = np.concatenate(
        [
            m_obs[:, 1:] - top[1:, 0][None, :],
            m_obs_xplus[:, 1:] - A[1:, 0][None, :],
        ],
        axis=1,
    )
    Phi = np.vstack([top[1:, 1:], A[1:, 1:]])
    return GmmProblem(
        Phi=Phi,
        b_samples=b,
        lam=lam,
        n_top=top.shape[0] - 1,
        n_bottom=A.shape[0] - 1,
        index_set=Phi_nu.index_set,
    )


def estimate_covariance(b_samples: np.ndarray) -> np.ndarray:
    """Biased (1/M) sample covariance, symmetrized."""
    b = np.asarray(b_samples, dtype=float)
    if b.shape[0] < 2:
        raise ValueError("need at least two samples for a covariance estimate")
    mean = b.mean(axis=0)
    S = b.T @ b / b.shape[0] - np.outer(mean, mean)
    return 0.5 * (S + S.T)


def build_weight(Sigma: np.ndarray, n_top: int, lam: float) -> np.ndarray:
    """(blkdiag(Sigma_11, Sigma_22) + lam I)^{-1}; off-diagonal blocks discarded."""
    if lam <= 0:
        raise ValueError("regularizer must be positive")
    D = Sigma.shape[0]
    blk = np.zeros_like(Sigma)
    blk[:n_top, :n_top] = Sigma[:n_top, :n_top]
    blk[n_top:, n_top:] = Sigma[n_top:, n_top:]
    W = np.linalg.inv(blk + lam * np.eye(D))
    return 0.5 * (W + W.T)


def _weighted_least_squares(Phi: np.ndarray, W: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """argmin ||rhs - Phi m||_W via W^{1/2} QR, not the explicit normal inverse."""
    evals, evecs = np.linalg.eigh(W)
    evals = np.clip(evals, 0.0, None)
    W12 = evecs * np.sqrt(evals) @ evecs.T
    sol, *_ = np.linalg.lstsq(W12 @ Phi, W12 @ rhs, rcond=None)
    return sol


def solve_gmm(problem: GmmProblem) -> GmmSolution:
    """Two-step GMM: weight from the raw b_i covariance, then weighted least squares."""
    Sigma = estimate_covariance(problem.b_samples)
    W = build_weight(Sigma, problem.n_top, problem.lam)
    b_bar = problem.b_samples.mean(axis=0)
    m_plus = _weighted_least_squares(problem.Phi, W, b_bar)
    resid = b_bar - problem.Phi @ m_plus
    objective = float(resid @ W @ resid)
    svals_phi = np.linalg.svd(problem.Phi, compute_uv=False)
    evals_w = np.linalg.eigvalsh(W)
    m_hat = MomentVector(
        basis=problem.index_set, values=np.concatenate([[1.0], m_plus])
    )
    return GmmSolution(
        m_hat=m_hat,
        W_hat=W,
        objective=objective,
        diagnostics={
            "sigma_min_Phi": float(svals_phi[-1]),
            "sigma_max_W": float(evals_w[-1]),
            "sigma_min_W": float(evals_w[0]),
            "misspec_residual_norm": float(np.linalg.norm(resid)),
        },
    )


def estimate_moments(
    ds: ObservedDataset,
    model: SystemModel,
    index_set_psi: MultiIndexSet,
    index_set_V: MultiIndexSet,
    obs_noise: NoiseModel,
    lam: float = 1e-4,
) -> GmmSolution:
    """Full pipeline: sample moments -> deconvolution matrices -> GMM solve."""
    Phi_nu = build_deconv_matrix(index_set_psi, obs_noise)
    Phi_nux = build_deconv_matrix(index_set_V, obs_noise.marginal(range(model.n_x)))
    G2_mono = dynamics_matrix_monomial(model, index_set_psi, index_set_V)
    m_obs, m_obs_xplus = sample_moment_vectors(ds, index_set_psi, index_set_V, model.n_x)
    problem = stack_gmm_problem(m_obs, m_obs_xplus, Phi_nu, Phi_nux, G2_mono, lam)
    return solve_gmm(problem)


def gmm_population_limit(
    Phi: np.ndarray, W_bar: np.ndarray, Eb: np.ndarray
) -> np.ndarray:
    """The probability limit of the estimator at population weight and mean."""
    return _weighted_least_squares(Phi, W_bar, Eb)


def lemma_bound_constant(Phi: np.ndarray, W_bar: np.ndarray, Phi_nux: np.ndarray, D_V: int) -> float:
    """2 sqrt(sigma_max(W) D_V) sigma_max(Phi_nux) / (sqrt(sigma_min(W)) sigma_min(Phi))."""
    ew = np.linalg.eigvalsh(W_bar)
    smin_phi = np.linalg.svd(Phi, compute_uv=False)[-1]
    smax_nux = np.linalg.svd(Phi_nux, compute_uv=False)[0]
    return float(2.0 * np.sqrt(ew[-1] * D_V) * smax_nux / (np.sqrt(ew[0]) * smin_phi))


def consistency_gap_report(
    model: SystemModel,
    index_set_psi: MultiIndexSet,
    index_set_V: MultiIndexSet,
    obs_noise: NoiseModel,
    m_bar: MomentVector,
    m_bar_xplus: np.ndarray,
    Sigma_bar: np.ndarray,
    lam: float,
    sample_grid: np.ndarray,
) -> dict:
    """Numerical check of the estimator-limit error bound.

    Computes both sides: the left from the oracle moments, the right from the
    grid-sampled sup of the dynamics approximation error and the singular
    values of the population quantities.
    """
    Phi_nu = build_deconv_matrix(index_set_psi, obs_noise)
    Phi_nux = build_deconv_matrix(index_set_V, obs_noise.marginal(range(model.n_x)))
    G2_mono = dynamics_matrix_monomial(model, index_set_psi, index_set_V)
    A = Phi_nux.matrix @ G2_mono.T
    Eb = np.concatenate(
        [
            (Phi_nu.matrix @ m_bar.values)[1:] - Phi_nu.matrix[1:, 0],
            (Phi_nux.matrix @ m_bar_xplus)[1:] - A[1:, 0],
        ]
    )
    Phi = np.vstack([Phi_nu.matrix[1:, 1:], A[1:, 1:]])
    n_top = len(index_set_psi) - 1
    W_bar = build_weight(Sigma_bar, n_top, lam)
    m_tilde_plus = gmm_population_limit(Phi, W_bar, Eb)
    lhs = float(np.linalg.norm(m_bar.plus - m_tilde_plus))

    exact = conditional_moment_matrix(model, index_set_V, sample_grid)  # (P, D_V)
    approx = index_set_psi.eval_monomials(sample_grid) @ G2_mono  # (P, D_V)
    sup_err = float(np.max(np.abs(exact - approx)))
    C = lemma_bound_constant(Phi, W_bar, Phi_nux.matrix, len(index_set_V))
    rhs = C * sup_err
    return {
        "lhs": lhs,
        "rhs": rhs,
        "constant": C,
        "sup_dynamics_error": sup_err,
        "m_tilde_plus": m_tilde_plus,
        "holds": bool(lhs <= rhs + 1e-9),
    }
