"""Cost recovery for discounted MDPs from noise-corrupted expert demonstrations.

The pipeline: simulate an expert (discounted LQR or receding-horizon MPC),
corrupt the state-action observations with additive noise, deconvolve the
polynomial occupation-measure moments with a misspecified GMM estimator, and
recover the stage cost by a convex program with a sum-of-squares
nonnegativity certificate.
"""

from .polybasis import (
    MultiIndexSet,
    PolyBasis,
    enumerate_indices,
    make_lagrange_basis,
    make_monomial_basis,
)
from .systems import (
    BoxSpace,
    CostParams,
    NoiseModel,
    SystemModel,
    SYSTEM_PRESETS,
    TruncatedGaussian,
    make_linear_system,
    make_temperature_system,
)
from .expert import (
    GridValueFunction,
    LqrPolicy,
    MpcPolicy,
    greedy_policy,
    solve_discounted_riccati,
    value_iteration,
)
from .simulate import (
    ObservedDataset,
    Trajectory,
    corrupt,
    load_dataset,
    make_dataset,
    rollout,
    rollout_batch,
    save_dataset,
)
from .moments import (
    DeconvMatrix,
    GmmProblem,
    MomentVector,
    build_deconv_matrix,
    estimate_moments,
    solve_gmm,
)
from .ioc import (
    ApproxMatrices,
    IocProgram,
    IocSolution,
    assemble_program,
    build_approx_matrices,
    default_basis,
    solve_ioc,
)
from .oracle import OracleMoments, oracle_moments, value_iteration_policy
from .experiments import ExperimentConfig, run_experiment, run_trial, sweep

__all__ = [
    "ApproxMatrices",
    "BoxSpace",
    "CostParams",
    "DeconvMatrix",
    "ExperimentConfig",
    "GmmProblem",
    "GridValueFunction",
    "IocProgram",
    "IocSolution",
    "LqrPolicy",
    "MomentVector",
    "MpcPolicy",
    "MultiIndexSet",
    "NoiseModel",
    "ObservedDataset",
    "OracleMoments",
    "PolyBasis",
    "SYSTEM_PRESETS",
    "SystemModel",
    "Trajectory",
    "TruncatedGaussian",
    "assemble_program",
    "build_approx_matrices",
    "build_deconv_matrix",
    "corrupt",
    "default_basis",
    "enumerate_indices",
    "estimate_moments",
    "greedy_policy",
    "load_dataset",
    "make_dataset",
    "make_lagrange_basis",
    "make_linear_system",
    "make_monomial_basis",
    "make_temperature_system",
    "oracle_moments",
    "rollout",
    "rollout_batch",
    "run_experiment",
    "run_trial",
    "save_dataset",
    "solve_discounted_riccati",
    "solve_gmm",
    "solve_ioc",
    "sweep",
    "value_iteration_policy",
    "value_iteration",
]

__version__ = "0.1.0"
