"""Expert trajectory generation, observation corruption, and dataset persistence.

Datasets are stored as a CSV with header ``traj,t,y_0,...`` (17 significant
digits, round-trip exact) plus a ``<name>.meta.json`` sidecar.  Observations
are never clipped: the additive noise model is defined on the true pair, and
clipping observations would bias the known noise moments.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .systems import NoiseModel, SystemModel, TruncatedGaussian, sample_truncated_gaussian, step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (N+1, n_x)
    actions: np.ndarray  # (N+1, n_a); the final action is generated but unused

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        a = np.asarray(self.actions, dtype=float)
        if s.shape[0] != a.shape[0]:
            raise ValueError("states and actions must have equal length")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    def pairs(self) -> np.ndarray:
        return np.concatenate([self.states, self.actions], axis=1)


@dataclass(frozen=True)
class ObservedDataset:
    observations: np.ndarray  # (M, N+1, n_x + n_a)
    meta: dict

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim != 3:
            raise ValueError("observations must be an M x (N+1) x (n_x+n_a) tensor")
        M, T, _ = obs.shape
        if M < 1 or T < 2:
            raise ValueError("need M >= 1 trajectories of length >= 2")
        if int(self.meta.get("M", M)) != M or int(self.meta.get("N", T - 1)) != T - 1:
            raise ValueError("meta M/N inconsistent with tensor shape")
        object.__setattr__(self, "observations", obs)

    @property
    def M(self) -> int:
        return self.observations.shape[0]

    @property
    def N(self) -> int:
        return self.observations.shape[1] - 1

    @property
    def alpha(self) -> float:
        return float(self.meta["alpha"])


def rollout(
    model: SystemModel,
    policy,
    init_dist: TruncatedGaussian,
    N: int,
    rng: np.random.Generator,
) -> Trajectory:
    """One expert trajectory of N+1 state-action pairs; deterministic given rng."""
    if N < 1:
        raise ValueError("N must be >= 1")
    x = model.state_space.clip(sample_truncated_gaussian(init_dist, rng))
    states = [x]
    actions = []
    for _ in range(N):
        a = np.atleast_1d(policy.action(model, x))
        actions.append(a)
        x = step(model, x, a, rng)
        states.append(x)
    actions.append(np.atleast_1d(policy.action(model, x)))
    return Trajectory(states=np.array(states), actions=np.array(actions))


def rollout_batch(
    model: SystemModel,
    policy,
    init_dist: TruncatedGaussian,
    N: int,
    M: int,
    seed: int,
) -> list[Trajectory]:
    """M trajectories with per-trajectory RNG streams, actions computed in batch.

    Noise for trajectory i comes from stream ``SeedSequence(seed, spawn_key=(i,))``,
    so the output is independent of how the batch is organized.
    """
    rngs = [np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,))) for i in range(M)]
    X = np.stack([model.state_space.clip(sample_truncated_gaussian(init_dist, r)) for r in rngs])
    states = [X]
    actions = []
    clip_events = 0
    for t in range(N + 1):
        A = np.atleast_2d(policy.action_batch(model, X))
        actions.append(A)
        if t == N:
            break
        W = np.stack([sample_truncated_gaussian(model.process_noise, r) for r in rngs])
        nxt = model.drift(X, A) + W
        clipped = np.clip(nxt, model.state_space.lo, model.state_space.hi)
        clip_events += int(np.sum(np.any(clipped != nxt, axis=1)))
        X = clipped
        states.append(X)
    if clip_events:
        log.debug("clipped %d of %d transitions", clip_events, M * N)
    S = np.stack(states, axis=1)  # (M, N+1, n_x)
    A = np.stack(actions, axis=1)  # (M, N+1, n_a)
    return [Trajectory(states=S[i], actions=A[i]) for i in range(M)]


def corrupt(traj: Trajectory, obs_noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """y_t = (x_t, a_t) + v_t with i.i.d. v_t; observations are not clipped."""
    pairs = traj.pairs()
    if obs_noise.dim != pairs.shape[1]:
        raise ValueError("noise dimension must equal n_x + n_a")
    v = obs_noise.sample(rng, size=pairs.shape[0])
    return pairs + v


def make_dataset(
    trajectories: list[Trajectory],
    obs_noise: NoiseModel,
    seed: int,
    meta: dict,
) -> ObservedDataset:
    """Corrupt each trajectory with its own noise stream and assemble the tensor."""
    obs = []
    for i, traj in enumerate(trajectories):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i, 1)))
        obs.append(corrupt(traj, obs_noise, rng))
    obs = np.stack(obs)
    full_meta = dict(meta)
    full_meta.update({"M": obs.shape[0], "N": obs.shape[1] - 1, "seed": seed})
    return ObservedDataset(observations=obs, meta=full_meta)


def save_dataset(ds: ObservedDataset, path) -> None:
    """CSV with header traj,t,y_0,... plus a JSON meta sidecar."""
    path = Path(path)
    M, T, n = ds.observations.shape
    with open(path, "w") as fh:
        cols = ",".join(f"y_{j}" for j in range(n))
        fh.write(f"traj,t,{cols}\n")
        for i in range(M):
            for t in range(T):
                row = ",".join(format(v, ".17g") for v in ds.observations[i, t])
                fh.write(f"{i},{t},{row}\n")
    with open(meta_path(path), "w") as fh:
        json.dump(ds.meta, fh, indent=2, sort_keys=True)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".meta.json") if path.suffix != ".csv" else path.with_name(path.stem + ".meta.json")


def load_dataset(path) -> ObservedDataset:
    path = Path(path)
    mp = meta_path(path)
    if not mp.exists():
        raise FileNotFoundError(f"missing meta sidecar {mp}")
    with open(mp) as fh:
        meta = json.load(fh)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["traj", "t"] or not all(c.startswith("y_") for c in header[2:]):
            raise ValueError("malformed dataset header")
        n = len(header) - 2
        rows = []
        keys = []
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != n + 2:
                raise ValueError("malformed dataset row")
            keys.append((int(parts[0]), int(parts[1])))
            rows.append([float(v) for v in parts[2:]])
    M = int(meta["M"])
    T = int(meta["N"]) + 1
    if len(rows) != M * T:
        raise ValueError(f"expected {M * T} rows, found {len(rows)}")
    obs = np.empty((M, T, n))
    for (i, t), row in zip(keys, rows):
        obs[i, t] = row
    return ObservedDataset(observations=obs, meta=meta)
