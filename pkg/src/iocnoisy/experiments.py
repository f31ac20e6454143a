"""End-to-end trial orchestration: generate demonstrations, estimate, solve, score.

A trial samples true cost coefficients, builds the matching expert (discounted
LQR for the linear preset, receding-horizon MPC for the temperature preset),
simulates noisy demonstrations, runs the moment estimator, and solves the
cost-recovery program.  Errors are reported on unit-2-norm-normalized
coefficient vectors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .expert import MpcPolicy, solve_discounted_riccati
from .ioc import (
    assemble_program,
    build_approx_matrices,
    default_basis,
    solve_ioc,
)
from .moments import estimate_moments
from .simulate import ObservedDataset, make_dataset, rollout_batch
from .systems import CostParams, NoiseModel, SYSTEM_PRESETS, SystemModel, TruncatedGaussian

INIT_STD = 0.3
INIT_BOUND = 0.9


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "linear"
    trials: int = 20
    M: int = 256
    N: int = 10
    alpha: float = 0.9
    obs_noise_std: float = 0.05
    d_psi: int = 2
    d_V: int = 2
    lam: float = 1e-4
    seed: int = 0
    nonneg_mode: str = "sos"
    beta_ell: float = 10.0
    beta_V: float = 100.0
    output_dir: str = "out"

    def __post_init__(self):
        if self.system not in SYSTEM_PRESETS:
            raise ValueError(f"unknown system {self.system!r}")
        if self.d_V > self.d_psi:
            raise ValueError("d_V must not exceed d_psi")
        for name in ("trials", "M", "N", "d_psi", "d_V"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.alpha < 1) or self.obs_noise_std <= 0 or self.lam <= 0:
            raise ValueError("alpha in (0,1), noise std and lambda positive")


@dataclass(frozen=True)
class TrialResult:
    true_theta: np.ndarray  # unit-normalized
    est_theta: np.ndarray  # unit-normalized
    error_2norm: float
    error_per_coeff: np.ndarray  # signed
    objective: float
    status: str
    timings: dict = field(default_factory=dict)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))


def sample_true_cost(model: SystemModel, rng: np.random.Generator) -> CostParams:
    """Uniform coefficients on the unit cube; control weight kept away from zero."""
    while True:
        theta = rng.uniform(0.0, 1.0, size=model.n_ell)
        # the forward solvers need a nonsingular control penalty
        if theta[-1] > 1e-3:
            return CostParams(theta_ell=theta)


def build_expert(model: SystemModel, cost: CostParams):
    if model.is_linear:
        return solve_discounted_riccati(model, cost, tol=1e-12)
    return MpcPolicy(horizon=64, discount=model.discount, cost=cost)


def init_distribution(model: SystemModel) -> TruncatedGaussian:
    return TruncatedGaussian(
        mean=np.zeros(model.n_x), std=np.full(model.n_x, INIT_STD), bound=INIT_BOUND
    )


def obs_noise_model(model: SystemModel, std: float, max_degree: int) -> NoiseModel:
    n = model.n_x + model.n_a
    return NoiseModel(
        kind="gaussian", mean=np.zeros(n), std=np.full(n, std), max_degree=max_degree
    )


def generate_dataset(
    cfg: ExperimentConfig, model: SystemModel, cost: CostParams, trial: int
) -> ObservedDataset:
    policy = build_expert(model, cost)
    data_seed = int(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(trial, 7)).generate_state(1)[0]
    )
    trajectories = rollout_batch(
        model, policy, init_distribution(model), cfg.N, cfg.M, data_seed
    )
    noise = obs_noise_model(model, cfg.obs_noise_std, max_degree=cfg.d_psi)
    meta = {
        "system": model.name,
        "alpha": model.discount,
        "obs_noise_std": cfg.obs_noise_std,
        "proc_noise_std": float(model.process_noise.std[0]),
        "policy": "lqr" if model.is_linear else "mpc64",
        "true_theta": cost.theta_ell.tolist(),
    }
    return make_dataset(trajectories, noise, data_seed, meta)


def recover_cost(cfg: ExperimentConfig, model: SystemModel, ds: ObservedDataset):
    """Moment estimation plus program solve; returns (solution, gmm_solution)."""
    from .polybasis import enumerate_indices

    iset_psi = enumerate_indices(model.n_x + model.n_a, cfg.d_psi)
    iset_V = enumerate_indices(model.n_x, cfg.d_V)
    noise = obs_noise_model(model, cfg.obs_noise_std, max_degree=cfg.d_psi)
    gmm = estimate_moments(ds, model, iset_psi, iset_V, noise, lam=cfg.lam)
    basis = default_basis(model, cfg.d_psi)
    A = build_approx_matrices(model, basis, cfg.d_V)
    program = assemble_program(
        A,
        gmm.m_hat,
        model.discount,
        beta_ell=cfg.beta_ell,
        beta_V=cfg.beta_V,
        mode=cfg.nonneg_mode,
    )
    sol = solve_ioc(program)
    return sol, gmm, program


def run_trial(cfg: ExperimentConfig, trial: int) -> TrialResult:
    model = SYSTEM_PRESETS[cfg.system]()
    rng = trial_rng(cfg.seed, trial)
    cost = sample_true_cost(model, rng)
    t0 = time.perf_counter()
    ds = generate_dataset(cfg, model, cost, trial)
    t1 = time.perf_counter()
    sol, gmm, _ = recover_cost(cfg, model, ds)
    t2 = time.perf_counter()
    true_n = cost.normalized()
    if sol.status != "optimal":
        return TrialResult(
            true_theta=true_n,
            est_theta=np.full_like(true_n, np.nan),
            error_2norm=np.nan,
            error_per_coeff=np.full_like(true_n, np.nan),
            objective=np.nan,
            status=sol.status,
            timings={"simulate": t1 - t0, "solve": t2 - t1},
        )
    est_n = sol.normalized_theta_ell
    return TrialResult(
        true_theta=true_n,
        est_theta=est_n,
        error_2norm=float(np.linalg.norm(est_n - true_n)),
        error_per_coeff=est_n - true_n,
        objective=sol.objective,
        status="optimal",
        timings={"simulate": t1 - t0, "solve": t2 - t1},
    )


@dataclass(frozen=True)
class ExperimentSummary:
    config: ExperimentConfig
    results: list
    mean_signed_error: np.ndarray
    std_signed_error: np.ndarray
    mean_error_2norm: float
    n_ok: int
    n_failed: int

    def to_dict(self) -> dict:
        return {
            "system": self.config.system,
            "trials": self.config.trials,
            "M": self.config.M,
            "N": self.config.N,
            "d_psi": self.config.d_psi,
            "d_V": self.config.d_V,
            "obs_noise_std": self.config.obs_noise_std,
            "seed": self.config.seed,
            "mean_signed_error": self.mean_signed_error.tolist(),
            "std_signed_error": self.std_signed_error.tolist(),
            "mean_error_2norm": self.mean_error_2norm,
            "n_ok": self.n_ok,
            "n_failed": self.n_failed,
        }


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentSummary:
    """Run all trials; failed trials are recorded and excluded from the statistics."""
    results = []
    for trial in range(cfg.trials):
        results.append(run_trial(cfg, trial))
        if progress is not None:
            progress(trial, results[-1])
    ok = [r for r in results if r.status == "optimal"]
    if ok:
        errs = np.stack([r.error_per_coeff for r in ok])
        mean_signed = errs.mean(axis=0)
        std_signed = errs.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(errs.shape[1])
        mean_2 = float(np.mean([r.error_2norm for r in ok]))
    else:
        n = len(results[0].true_theta) if results else 0
        mean_signed = np.full(n, np.nan)
        std_signed = np.full(n, np.nan)
        mean_2 = np.nan
    return ExperimentSummary(
        config=cfg,
        results=results,
        mean_signed_error=mean_signed,
        std_signed_error=std_signed,
        mean_error_2norm=mean_2,
        n_ok=len(ok),
        n_failed=len(results) - len(ok),
    )


def sweep(cfg: ExperimentConfig, field_name: str, values, progress=None):
    """Run the experiment over a parameter sweep; returns [(value, summary)]."""
    out = []
    for v in values:
        if field_name in ("degrees",):
            d_psi, d_v = v
            sub = replace(cfg, d_psi=d_psi, d_V=d_v)
        else:
            sub = replace(cfg, **{field_name: v})
        out.append((v, run_experiment(sub, progress=progress)))
    return out
