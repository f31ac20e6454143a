"""Ground-truth moment computation for small instances.

The oracle rolls out the true expert policy in bulk (no observation noise),
averages discounted monomials, and optionally simulates the observation
channel to estimate the population covariance of the stacked moment samples.
Used by diagnostics and the acceptance suite, not by the estimator itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expert import GreedyGridPolicy, GridValueFunction, value_iteration
from .moments import MomentVector, discount_weights
from .polybasis import MultiIndexSet
from .systems import CostParams, NoiseModel, SystemModel, TruncatedGaussian, sample_truncated_gaussian


def value_iteration_policy(
    model: SystemModel,
    cost: CostParams,
    n_state: int = 81,
    n_action: int = 41,
    tol: float = 1e-9,
    quad_nodes: int = 4,
) -> tuple[GreedyGridPolicy, GridValueFunction]:
    """Fine-grid value iteration and the induced greedy policy (brute-force expert)."""
    state_axes = tuple(
        np.linspace(lo, hi, n_state)
        for lo, hi in zip(model.state_space.lo, model.state_space.hi)
    )
    action_axes = tuple(
        np.linspace(lo, hi, n_action)
        for lo, hi in zip(model.action_space.lo, model.action_space.hi)
    )
    V = value_iteration(
        model, cost, state_axes, action_axes, tol=tol, quad_nodes=quad_nodes
    )
    return GreedyGridPolicy(V=V, model=model, cost=cost), V


@dataclass(frozen=True)
class OracleMoments:
    m_bar: MomentVector  # discounted occupation-measure moments, monomial basis
    m_bar_xplus: np.ndarray  # shifted state-marginal moments, monomial basis
    Sigma_bar: np.ndarray | None  # covariance of stacked observed moment samples
    psi_along_path: float | None = None  # discounted Bellman gap along the rollouts


def oracle_moments(
    model: SystemModel,
    policy,
    init_dist: TruncatedGaussian,
    index_set_psi: MultiIndexSet,
    index_set_V: MultiIndexSet,
    N: int,
    n_rollouts: int = 200_000,
    seed: int = 0,
    obs_noise: NoiseModel | None = None,
) -> OracleMoments:
    """Monte Carlo oracle for the discounted finite-horizon moment vectors.

    When ``obs_noise`` is given, the observation channel is simulated too and
    the covariance of the per-trajectory stacked moment samples is returned
    (constant offsets do not affect it).
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xACE,)))
    X = model.state_space.clip(sample_truncated_gaussian(init_dist, rng, n_rollouts))
    w = discount_weights(model.discount, N)
    D_psi, D_V = len(index_set_psi), len(index_set_V)
    m_bar = np.zeros(D_psi)
    m_xplus = np.zeros(D_V)
    m_obs = np.zeros((n_rollouts, D_psi)) if obs_noise is not None else None
    m_obs_xplus = np.zeros((n_rollouts, D_V)) if obs_noise is not None else None
    for t in range(N):
        A = np.atleast_2d(policy.action_batch(model, X))
        eta = np.concatenate([X, A], axis=1)
        phi = index_set_psi.eval_monomials(eta)
        m_bar += w[t] * phi.mean(axis=0)
        if obs_noise is not None:
            y = eta + obs_noise.sample(rng, size=n_rollouts)
            m_obs += w[t] * index_set_psi.eval_monomials(y)
        Wn = sample_truncated_gaussian(model.process_noise, rng, n_rollouts)
        X = np.clip(model.drift(X, A) + Wn, model.state_space.lo, model.state_space.hi)
        rx = index_set_V.eval_monomials(X)
        m_xplus += w[t] * rx.mean(axis=0)
        if obs_noise is not None:
            yx = X + obs_noise.marginal(range(model.n_x)).sample(rng, size=n_rollouts)
            m_obs_xplus += w[t] * index_set_V.eval_monomials(yx)
    Sigma = None
    if obs_noise is not None:
        from .moments import estimate_covariance

        b = np.concatenate([m_obs[:, 1:], m_obs_xplus[:, 1:]], axis=1)
        Sigma = estimate_covariance(b)
    return OracleMoments(
        m_bar=MomentVector(basis=index_set_psi, values=m_bar),
        m_bar_xplus=m_xplus,
        Sigma_bar=Sigma,
    )
