"""Assembly and solution of the finite-dimensional inverse-optimal-control program.

The program minimizes the estimated-moment pairing of the Bellman-gap
polynomial subject to: the gap being a combination of cost features and
value-function basis terms, a normalization that rules out the zero cost,
l1 bounds, and nonnegativity on the state-action box.  Nonnegativity is
enforced either by a weighted sum-of-squares certificate (PSD Gram
matrices, the default) or by a dense sample grid (a documented relaxation
used as a test scaffold).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .moments import MomentVector
from .polybasis import (
    MultiIndexSet,
    PolyBasis,
    change_of_basis,
    enumerate_indices,
    eval_basis,
    integrate_basis_over_box,
    make_lagrange_basis,
)
from .systems import SystemModel, conditional_moment_matrix

log = logging.getLogger(__name__)

DEFAULT_BETA_ELL = 10.0
DEFAULT_BETA_V = 100.0


@dataclass(frozen=True)
class ApproxMatrices:
    """Node-evaluation matrices tying the program to the Lagrange basis.

    Row j corresponds to interpolation node eta_j: H rows are the cost
    features, G1 rows the value basis at the state part, G2 rows the
    conditional expectation of the value basis after one transition.
    """

    H: np.ndarray  # (D_psi, n_ell)
    G1: np.ndarray  # (D_psi, D_V)
    G2: np.ndarray  # (D_psi, D_V)
    d: np.ndarray  # (D_psi,)
    basis_psi: PolyBasis
    basis_r: MultiIndexSet


def build_approx_matrices(
    model: SystemModel, basis_psi: PolyBasis, d_V: int
) -> ApproxMatrices:
    if basis_psi.kind != "lagrange":
        raise ValueError("program assembly expects the Lagrange basis")
    if d_V > basis_psi.index_set.max_degree:
        raise ValueError("d_V must not exceed d_psi")
    nodes = basis_psi.nodes
    r_iset = enumerate_indices(model.n_x, d_V)
    H = model.features(nodes[:, : model.n_x], nodes[:, model.n_x :])
    G1 = r_iset.eval_monomials(nodes[:, : model.n_x])
    G2 = conditional_moment_matrix(model, r_iset, nodes)
    d = integrate_basis_over_box(basis_psi)
    return ApproxMatrices(H=H, G1=G1, G2=G2, d=d, basis_psi=basis_psi, basis_r=r_iset)


@dataclass(frozen=True)
class IocProgram:
    Xi_psi: np.ndarray  # (D_psi, n_ell + D_V) = [H, alpha G2 - G1]
    d: np.ndarray
    m_hat: np.ndarray  # moment vector in the phi (Lagrange) basis
    n_ell: int
    beta_ell: float
    beta_V: float
    nonneg_mode: str  # "sos" | "grid"
    basis_psi: PolyBasis
    grid_density: int = 15

    def __post_init__(self):
        if self.beta_ell <= 0 or self.beta_V <= 0:
            raise ValueError("l1 bounds must be positive")
        if self.nonneg_mode not in ("sos", "grid"):
            raise ValueError(f"unknown nonnegativity mode {self.nonneg_mode!r}")


def assemble_program(
    A: ApproxMatrices,
    m_hat: MomentVector,
    alpha: float,
    beta_ell: float = DEFAULT_BETA_ELL,
    beta_V: float = DEFAULT_BETA_V,
    mode: str = "sos",
    grid_density: int = 15,
) -> IocProgram:
    """Build the conic program from approximation matrices and monomial moments."""
    if m_hat.basis.exponents.shape != A.basis_psi.index_set.exponents.shape or np.any(
        m_hat.basis.exponents != A.basis_psi.index_set.exponents
    ):
        raise ValueError("moment vector index set does not match the program basis")
    B = change_of_basis(A.basis_psi).matrix
    m_phi = B @ m_hat.values  # phi = B phi_mono => <phi, mu> = B <phi_mono, mu>
    Xi = np.concatenate([A.H, alpha * A.G2 - A.G1], axis=1)
    return IocProgram(
        Xi_psi=Xi,
        d=A.d,
        m_hat=m_phi,
        n_ell=A.H.shape[1],
        beta_ell=beta_ell,
        beta_V=beta_V,
        nonneg_mode=mode,
        basis_psi=A.basis_psi,
        grid_density=grid_density,
    )


def _box_multipliers(domain: np.ndarray, n: int):
    """Per-coordinate box polynomials g_k = (hi - z_k)(z_k - lo) as coeff dicts."""
    gs = []
    for k in range(n):
        lo, hi = domain[k]
        zero = tuple(0 for _ in range(n))
        e_k = tuple(1 if j == k else 0 for j in range(n))
        e2_k = tuple(2 if j == k else 0 for j in range(n))
        gs.append({zero: -lo * hi, e_k: lo + hi, e2_k: -1.0})
    return gs


def encode_nonnegativity(program: IocProgram, theta_psi) -> list:
    """Conic constraints making theta_psi' phi nonnegative on the box."""
    if program.nonneg_mode == "grid":
        axes = [
            np.linspace(lo, hi, program.grid_density)
            for lo, hi in program.basis_psi.domain
        ]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        vals = eval_basis(program.basis_psi, pts)  # (P, D_psi)
        return [vals @ theta_psi >= 0]
    return _sos_constraints(program, theta_psi)


def _sos_constraints(program: IocProgram, theta_psi) -> list:
    """Putinar certificate: p = sigma_0 + sum_k sigma_k g_k with SOS multipliers."""
    iset = program.basis_psi.index_set
    n = iset.dimension
    d_psi = iset.max_degree
    half = math.ceil(d_psi / 2)
    full_set = enumerate_indices(n, 2 * half)
    pos = {tuple(e): i for i, e in enumerate(full_set.exponents.tolist())}

    # Monomial coefficients of p: c = B^T theta_psi, padded past degree d_psi.
    B = change_of_basis(program.basis_psi).matrix
    pad = np.zeros((len(full_set), len(iset)))
    pad[: len(iset), :] = B.T  # graded-lex lower-degree set is a prefix
    c_expr = pad @ theta_psi

    sigma0_set = enumerate_indices(n, half)
    sigmak_set = enumerate_indices(n, max(half - 1, 0))
    Q0 = cp.Variable((len(sigma0_set), len(sigma0_set)), PSD=True)
    gs = _box_multipliers(program.basis_psi.domain, n)
    Qks = [cp.Variable((len(sigmak_set), len(sigmak_set)), PSD=True) for _ in gs]

    # Accumulate, per target exponent, the list of Gram entries that land there.
    terms: dict[int, list] = {i: [] for i in range(len(full_set))}
    e0 = sigma0_set.exponents.tolist()
    for i in range(len(sigma0_set)):
        for j in range(len(sigma0_set)):
            t = pos[tuple(a + b for a, b in zip(e0[i], e0[j]))]
            terms[t].append(Q0[i, j])
    ek = sigmak_set.exponents.tolist()
    for Qk, g in zip(Qks, gs):
        for i in range(len(sigmak_set)):
            for j in range(len(sigmak_set)):
                base = tuple(a + b for a, b in zip(ek[i], ek[j]))
                for gexp, gcoef in g.items():
                    t = pos[tuple(a + b for a, b in zip(base, gexp))]
                    terms[t].append(gcoef * Qk[i, j])
    constraints = []
    for t in range(len(full_set)):
        lhs = cp.sum(cp.hstack(terms[t])) if terms[t] else 0.0
        constraints.append(lhs == c_expr[t])
    return constraints


@dataclass(frozen=True)
class IocSolution:
    theta_psi: np.ndarray
    theta_ell: np.ndarray
    theta_V: np.ndarray
    objective: float
    status: str  # "optimal" | "infeasible" | "numerical_failure"
    solver_stats: dict = field(default_factory=dict)

    @property
    def normalized_theta_ell(self) -> np.ndarray:
        nrm = np.linalg.norm(self.theta_ell)
        return self.theta_ell / nrm if nrm > 0 else self.theta_ell

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "theta_ell": self.theta_ell.tolist(),
            "theta_ell_normalized": self.normalized_theta_ell.tolist(),
            "theta_V": self.theta_V.tolist(),
            "bounds_active": self.solver_stats.get("bounds_active", []),
            "solver": {
                k: v
                for k, v in self.solver_stats.items()
                if k in ("iterations", "residuals", "solver_name")
            },
        }


def solve_ioc(program: IocProgram, solver: str = "CLARABEL", **solver_kwargs) -> IocSolution:
    """Solve the linear-objective conic program and normalize the recovered cost."""
    n_ell = program.n_ell
    D_V = program.Xi_psi.shape[1] - n_ell
    th_ell = cp.Variable(n_ell)
    th_V = cp.Variable(D_V)
    theta = cp.hstack([th_ell, th_V])
    theta_psi = program.Xi_psi @ theta
    constraints = [
        program.d @ theta_psi >= 1,
        cp.norm1(th_ell) <= program.beta_ell,
        cp.norm1(th_V) <= program.beta_V,
    ]
    constraints += encode_nonnegativity(program, theta_psi)
    prob = cp.Problem(cp.Minimize(program.m_hat @ theta_psi), constraints)
    try:
        prob.solve(solver=solver, **solver_kwargs)
    except cp.error.SolverError as exc:
        return IocSolution(
            theta_psi=np.full(program.Xi_psi.shape[0], np.nan),
            theta_ell=np.full(n_ell, np.nan),
            theta_V=np.full(D_V, np.nan),
            objective=np.nan,
            status="numerical_failure",
            solver_stats={"error": str(exc)},
        )
    if prob.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        ell = np.asarray(th_ell.value).reshape(-1)
        v = np.asarray(th_V.value).reshape(-1)
        psi = program.Xi_psi @ np.concatenate([ell, v])
        active = []
        if np.abs(ell).sum() > 0.99 * program.beta_ell:
            active.append("theta_ell")
        if np.abs(v).sum() > 0.99 * program.beta_V:
            active.append("theta_V")
        if active:
            log.warning("l1 bounds nearly active at the optimum: %s", active)
        stats = {
            "solver_name": solver,
            "iterations": getattr(prob.solver_stats, "num_iters", None),
            "bounds_active": active,
            "inaccurate": prob.status == cp.OPTIMAL_INACCURATE,
        }
        return IocSolution(
            theta_psi=psi,
            theta_ell=ell,
            theta_V=v,
            objective=float(prob.value),
            status="optimal",
            solver_stats=stats,
        )
    status = "infeasible" if "infeasible" in prob.status else "numerical_failure"
    return IocSolution(
        theta_psi=np.full(program.Xi_psi.shape[0], np.nan),
        theta_ell=np.full(n_ell, np.nan),
        theta_V=np.full(D_V, np.nan),
        objective=np.nan,
        status=status,
        solver_stats={"solver_name": solver, "raw_status": prob.status},
    )


def slackness_report(solution: IocSolution, program: IocProgram, m: MomentVector) -> float:
    """The consistency functional: moments (monomial convention) paired with theta_psi."""
    B = change_of_basis(program.basis_psi).matrix
    return float((B @ m.values) @ solution.theta_psi)


def default_basis(model: SystemModel, d_psi: int) -> PolyBasis:
    """Lagrange basis on the state-action box for the given total degree."""
    domain = np.concatenate(
        [model.state_space.bounds(), model.action_space.bounds()], axis=0
    )
    iset = enumerate_indices(model.n_x + model.n_a, d_psi)
    return make_lagrange_basis(iset, domain)
