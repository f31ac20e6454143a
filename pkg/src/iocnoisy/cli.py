"""Command-line harness for the cost-recovery pipeline.

Subcommands: simulate (generate a noisy demonstration dataset), estimate
(GMM moment estimation), solve (cost recovery from estimated moments),
experiment (trial loops with aggregate statistics), oracle (ground-truth
moments from the forward solvers).  Flags override config-file values.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .experiments import (
    ExperimentConfig,
    build_expert,
    generate_dataset,
    init_distribution,
    obs_noise_model,
    run_experiment,
    sample_true_cost,
    sweep,
    trial_rng,
)
from .ioc import assemble_program, build_approx_matrices, default_basis, solve_ioc
from .moments import MomentVector, estimate_moments
from .polybasis import enumerate_indices
from .simulate import load_dataset, save_dataset
from .systems import CostParams, SYSTEM_PRESETS


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive (M vs N, beta_V)
    if not parser.read(path):
        raise FileNotFoundError(path)
    out = {}
    for section in parser.sections():
        out.update(dict(parser[section]))
    return out


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def build_experiment_config(args) -> ExperimentConfig:
    values = load_config(getattr(args, "config", None))
    flag_map = {
        "system": "system",
        "trials": "trials",
        "M": "M",
        "N": "N",
        "dpsi": "d_psi",
        "dv": "d_V",
        "seed": "seed",
        "mode": "nonneg_mode",
        "out": "output_dir",
        "obs_noise_std": "obs_noise_std",
        "lam": "lam",
    }
    for flag, field in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[field] = v
    kwargs = {}
    for name, raw in values.items():
        if name not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {name!r}")
        kwargs[name] = _CASTS.get(_FIELD_TYPES[name], str)(raw)
    return ExperimentConfig(**kwargs)


def _add_common_flags(p):
    p.add_argument("--config", help="INI config file mirroring ExperimentConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--system", choices=sorted(SYSTEM_PRESETS))
    p.add_argument("--trials", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--dpsi", type=int)
    p.add_argument("--dv", type=int)
    p.add_argument("--mode", choices=["sos", "grid"])
    p.add_argument("--obs-noise-std", type=float, dest="obs_noise_std")
    p.add_argument("--lam", type=float)
    p.add_argument("--out", help="output directory")


def cmd_simulate(args) -> int:
    cfg = build_experiment_config(args)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = SYSTEM_PRESETS[cfg.system]()
    rng = trial_rng(cfg.seed, 0)
    cost = sample_true_cost(model, rng)
    ds = generate_dataset(cfg, model, cost, trial=0)
    path = out_dir / f"{cfg.system}_dataset.csv"
    save_dataset(ds, path)
    print(f"wrote {path} ({ds.M} trajectories, N={ds.N})")
    return 0


def cmd_estimate(args) -> int:
    cfg = build_experiment_config(args)
    ds = load_dataset(args.dataset)
    model = SYSTEM_PRESETS[ds.meta["system"]]()
    iset_psi = enumerate_indices(model.n_x + model.n_a, cfg.d_psi)
    iset_V = enumerate_indices(model.n_x, cfg.d_V)
    noise = obs_noise_model(model, float(ds.meta["obs_noise_std"]), max_degree=cfg.d_psi)
    gmm = estimate_moments(ds, model, iset_psi, iset_V, noise, lam=cfg.lam)
    report = {
        "moments": gmm.m_hat.to_dict(),
        "objective": gmm.objective,
        "diagnostics": gmm.diagnostics,
        "lambda": cfg.lam,
        "meta": ds.meta,
    }
    if args.oracle:
        from .moments import consistency_gap_report
        from .oracle import oracle_moments

        cost = CostParams(np.asarray(ds.meta["true_theta"]))
        policy = build_expert(model, cost)
        om = oracle_moments(
            model,
            policy,
            init_distribution(model),
            iset_psi,
            iset_V,
            N=ds.N,
            n_rollouts=50_000,
            seed=cfg.seed,
            obs_noise=noise,
        )
        grid = _dense_grid(model, 25)
        gap = consistency_gap_report(
            model, iset_psi, iset_V, noise, om.m_bar, om.m_bar_xplus,
            om.Sigma_bar, cfg.lam, grid,
        )
        report["limit_gap_check"] = {
            k: v for k, v in gap.items() if k != "m_tilde_plus"
        }
    out = Path(args.moments_out)
    out.write_text(json.dumps(report, indent=2))
    print(f"wrote {out}")
    return 0


def _dense_grid(model, per_axis: int) -> np.ndarray:
    bounds = np.concatenate(
        [model.state_space.bounds(), model.action_space.bounds()], axis=0
    )
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in bounds]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def cmd_solve(args) -> int:
    cfg = build_experiment_config(args)
    report = json.loads(Path(args.moments).read_text())
    meta = report["meta"]
    model = SYSTEM_PRESETS[meta["system"]]()
    basis_meta = report["moments"]["basis"]
    iset = enumerate_indices(basis_meta["dim"], basis_meta["degree"])
    m_hat = MomentVector(basis=iset, values=np.asarray(report["moments"]["values"]))
    basis = default_basis(model, basis_meta["degree"])
    A = build_approx_matrices(model, basis, cfg.d_V)
    program = assemble_program(
        A, m_hat, model.discount, beta_ell=cfg.beta_ell, beta_V=cfg.beta_V,
        mode=cfg.nonneg_mode,
    )
    sol = solve_ioc(program)
    out_report = sol.to_dict()
    if "true_theta" in meta and sol.status == "optimal":
        true_n = CostParams(np.asarray(meta["true_theta"])).normalized()
        est_n = sol.normalized_theta_ell
        out_report["trial_result"] = {
            "true_theta": true_n.tolist(),
            "est_theta": est_n.tolist(),
            "error_2norm": float(np.linalg.norm(est_n - true_n)),
            "error_per_coeff": (est_n - true_n).tolist(),
        }
    out = Path(args.solution_out)
    out.write_text(json.dumps(out_report, indent=2))
    print(f"wrote {out} (status={sol.status})")
    return 0 if sol.status == "optimal" else 1


def cmd_experiment(args) -> int:
    cfg = build_experiment_config(args)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(i, res):
        print(f"trial {i}: status={res.status} err={res.error_2norm:.4f}", flush=True)

    if args.sweep_M:
        values = [int(v) for v in args.sweep_M.split(",")]
        rows = sweep(cfg, "M", values, progress=progress if args.verbose else None)
        _write_sweep_csv(out_dir / "sweep.csv", "M", rows)
        summaries = {str(v): s.to_dict() for v, s in rows}
    elif args.sweep_degrees:
        values = [tuple(int(x) for x in pair.split(":")) for pair in args.sweep_degrees.split(",")]
        rows = sweep(cfg, "degrees", values, progress=progress if args.verbose else None)
        _write_sweep_csv(out_dir / "sweep.csv", "degree", rows)
        summaries = {f"{a}:{b}": s.to_dict() for (a, b), s in rows}
    else:
        summary = run_experiment(cfg, progress=progress if args.verbose else None)
        with open(out_dir / "errors.csv", "w") as fh:
            fh.write("trial,coeff,signed_error\n")
            for i, r in enumerate(summary.results):
                for j, e in enumerate(r.error_per_coeff):
                    fh.write(f"{i},{j},{format(e, '.17g')}\n")
        summaries = summary.to_dict()
    (out_dir / "summary.json").write_text(json.dumps(summaries, indent=2, sort_keys=True))
    print(f"wrote {out_dir / 'summary.json'}")
    return 0


def _write_sweep_csv(path, key_name, rows):
    with open(path, "w") as fh:
        fh.write(f"{key_name},mean_error,std_error,n_ok\n")
        for v, s in rows:
            errs = [r.error_2norm for r in s.results if r.status == "optimal"]
            std = float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0
            key = v if not isinstance(v, tuple) else f"{v[0]}:{v[1]}"
            fh.write(f"{key},{s.mean_error_2norm:.6g},{std:.6g},{s.n_ok}\n")


def cmd_oracle(args) -> int:
    cfg = build_experiment_config(args)
    from .oracle import oracle_moments, value_iteration_policy

    model = SYSTEM_PRESETS[cfg.system]()
    rng = trial_rng(cfg.seed, 0)
    cost = sample_true_cost(model, rng)
    policy, _ = value_iteration_policy(
        model, cost, n_state=args.grid, n_action=args.grid // 2 + 1
    )
    iset_psi = enumerate_indices(model.n_x + model.n_a, cfg.d_psi)
    iset_V = enumerate_indices(model.n_x, cfg.d_V)
    om = oracle_moments(
        model, policy, init_distribution(model), iset_psi, iset_V,
        N=cfg.N, n_rollouts=args.rollouts, seed=cfg.seed,
    )
    report = {
        "moments": om.m_bar.to_dict(),
        "m_bar_xplus": om.m_bar_xplus.tolist(),
        "meta": {
            "system": cfg.system,
            "alpha": model.discount,
            "N": cfg.N,
            "true_theta": cost.theta_ell.tolist(),
            "rollouts": args.rollouts,
        },
    }
    out = Path(args.moments_out)
    out.write_text(json.dumps(report, indent=2))
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="iocnoisy", description="Cost recovery from noisy expert demonstrations"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a noisy demonstration dataset")
    _add_common_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate occupation-measure moments")
    _add_common_flags(p)
    p.add_argument("dataset", help="dataset CSV path")
    p.add_argument("--moments-out", default="moments.json")
    p.add_argument("--oracle", action="store_true", help="include the oracle limit-gap check")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("solve", help="recover the cost from estimated moments")
    _add_common_flags(p)
    p.add_argument("moments", help="moments JSON path")
    p.add_argument("--solution-out", default="solution.json")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("experiment", help="run trial loops with aggregate statistics")
    _add_common_flags(p)
    p.add_argument("--sweep-M", help="comma-separated M values")
    p.add_argument("--sweep-degrees", help="comma-separated dpsi:dv pairs")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle", help="ground-truth moments via grid value iteration")
    _add_common_flags(p)
    p.add_argument("--rollouts", type=int, default=100_000)
    p.add_argument("--grid", type=int, default=81, help="value-iteration grid points per state axis")
    p.add_argument("--moments-out", default="oracle_moments.json")
    p.set_defaults(func=cmd_oracle)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
