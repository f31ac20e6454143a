"""Concrete MDP models, noise models with exact moments, and conditional expectations.

Two presets are provided: a linear double integrator and a nonlinear
temperature control system, both with polynomial drift, truncated-Gaussian
process noise, and quadratic cost features.  Noise models expose exact raw
moments per axis (independent components), which is what makes the
deconvolution matrices and the dynamics moment block exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.stats import norm

from .polybasis import MultiIndexSet, enumerate_indices

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoxSpace:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        lo.setflags(write=False)
        hi.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def contains(self, x, atol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - atol) and np.all(x <= self.hi + atol))

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def bounds(self) -> np.ndarray:
        return np.stack([self.lo, self.hi], axis=1)


def gaussian_moments_1d(mean: float, std: float, max_degree: int) -> np.ndarray:
    """Raw moments E[X^k], k = 0..max_degree, for X ~ N(mean, std^2)."""
    m = np.empty(max_degree + 1)
    m[0] = 1.0
    if max_degree >= 1:
        m[1] = mean
    for k in range(2, max_degree + 1):
        m[k] = mean * m[k - 1] + (k - 1) * std ** 2 * m[k - 2]
    return m


def truncated_gaussian_moments_1d(
    mean: float, std: float, lo: float, hi: float, max_degree: int
) -> np.ndarray:
    """Raw moments of N(mean, std^2) truncated to [lo, hi].

    Standard recursion with normal pdf/cdf boundary terms:
    m_k = mean*m_{k-1} + (k-1)*std^2*m_{k-2} - std*(hi^{k-1} pdf(beta) - lo^{k-1} pdf(alpha))/Z.
    """
    a = (lo - mean) / std
    b = (hi - mean) / std
    z = norm.cdf(b) - norm.cdf(a)
    if z <= 0:
        raise ValueError("degenerate truncation interval")
    pa, pb = norm.pdf(a), norm.pdf(b)
    m = np.empty(max_degree + 1)
    m[0] = 1.0
    if max_degree >= 1:
        m[1] = mean - std * (pb - pa) / z
    for k in range(2, max_degree + 1):
        boundary = (hi ** (k - 1) * pb - lo ** (k - 1) * pa) / z
        m[k] = mean * m[k - 1] + (k - 1) * std ** 2 * m[k - 2] - std * boundary
    return m


@dataclass(frozen=True)
class TruncatedGaussian:
    """Independent components, symmetric truncation at mean +/- bound per axis."""

    mean: np.ndarray
    std: np.ndarray
    bound: float

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if std.shape != mean.shape:
            std = np.full_like(mean, float(std))
        if np.any(std <= 0) or self.bound <= 0:
            raise ValueError("std and bound must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        mean.setflags(write=False)
        std.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def sample_truncated_gaussian(
    dist: TruncatedGaussian, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Rejection sampling against the untruncated normal; stays within bounds."""
    n = 1 if size is None else size
    out = np.empty((n, dist.dim))
    pending = np.arange(n)
    while pending.size:
        draws = rng.normal(0.0, 1.0, size=(pending.size, dist.dim)) * dist.std + dist.mean
        ok = np.all(np.abs(draws - dist.mean) <= dist.bound, axis=1)
        out[pending[ok]] = draws[ok]
        pending = pending[~ok]
    return out[0] if size is None else out


@dataclass(frozen=True)
class NoiseModel:
    """Exact moment provider E[v^d] for independent-component noise.

    kind "gaussian" (untruncated) or "truncated_gaussian" (symmetric bound).
    """

    kind: str
    mean: np.ndarray
    std: np.ndarray
    max_degree: int
    bound: float | None = None
    _table: np.ndarray = field(init=False, repr=False)  # (dim, max_degree+1)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if std.shape != mean.shape:
            std = np.full_like(mean, float(std))
        if np.any(std <= 0):
            raise ValueError("noise covariance must be strictly positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        rows = []
        for mu, s in zip(mean, std):
            if self.kind == "gaussian":
                rows.append(gaussian_moments_1d(mu, s, self.max_degree))
            elif self.kind == "truncated_gaussian":
                if self.bound is None:
                    raise ValueError("truncated_gaussian needs a bound")
                rows.append(
                    truncated_gaussian_moments_1d(
                        mu, s, mu - self.bound, mu + self.bound, self.max_degree
                    )
                )
            else:
                raise ValueError(f"unknown noise kind {self.kind!r}")
        table = np.array(rows)
        object.__setattr__(self, "_table", table)
        table.setflags(write=False)
        mean.setflags(write=False)
        std.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def moment_table(self) -> np.ndarray:
        return self._table

    def marginal(self, axes) -> "NoiseModel":
        axes = list(axes)
        return NoiseModel(
            kind=self.kind,
            mean=self.mean[axes],
            std=self.std[axes],
            max_degree=self.max_degree,
            bound=self.bound,
        )

    def sampler(self) -> TruncatedGaussian | None:
        if self.kind == "truncated_gaussian":
            return TruncatedGaussian(self.mean, self.std, self.bound)
        return None

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        if self.kind == "gaussian":
            n = 1 if size is None else size
            draws = rng.normal(0.0, 1.0, size=(n, self.dim)) * self.std + self.mean
            return draws[0] if size is None else draws
        return sample_truncated_gaussian(self.sampler(), rng, size)


def noise_moment(model: NoiseModel, d) -> float:
    """Exact E[v^d]; product of per-axis raw moments."""
    d = np.atleast_1d(np.asarray(d, dtype=np.int64))
    if d.shape[0] != model.dim:
        raise ValueError("multi-index dimension mismatch")
    if int(d.sum()) > model.max_degree:
        raise ValueError(f"degree {int(d.sum())} exceeds max_degree {model.max_degree}")
    return float(np.prod(model._table[np.arange(model.dim), d]))


@dataclass(frozen=True)
class CostParams:
    theta_ell: np.ndarray

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta_ell, dtype=float))
        if not np.all(np.isfinite(th)):
            raise ValueError("cost coefficients must be finite")
        object.__setattr__(self, "theta_ell", th)
        th.setflags(write=False)

    def normalized(self) -> np.ndarray:
        nrm = np.linalg.norm(self.theta_ell)
        return self.theta_ell / nrm if nrm > 0 else self.theta_ell.copy()


@dataclass(frozen=True)
class SystemModel:
    """Polynomial-drift MDP with additive truncated-Gaussian process noise.

    ``drift_coeffs[i]`` are the coefficients of the i-th next-state component
    over the monomials of ``drift_iset`` (variables ordered state-then-action);
    ``feat_coeffs`` stores the cost features the same way.
    """

    name: str
    n_x: int
    n_a: int
    state_space: BoxSpace
    action_space: BoxSpace
    drift_iset: MultiIndexSet
    drift_coeffs: np.ndarray  # (n_x, D_drift)
    process_noise: TruncatedGaussian
    feat_iset: MultiIndexSet
    feat_coeffs: np.ndarray  # (n_ell, D_feat)
    discount: float
    lin_A: np.ndarray | None = None
    lin_B: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must lie strictly in (0, 1)")
        dc = np.asarray(self.drift_coeffs, dtype=float)
        fc = np.asarray(self.feat_coeffs, dtype=float)
        if not (np.all(np.isfinite(dc)) and np.all(np.isfinite(fc))):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "drift_coeffs", dc)
        object.__setattr__(self, "feat_coeffs", fc)
        dc.setflags(write=False)
        fc.setflags(write=False)

    @property
    def n_ell(self) -> int:
        return self.feat_coeffs.shape[0]

    @property
    def is_linear(self) -> bool:
        return self.lin_A is not None

    def eta(self, x, a) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return np.concatenate([x, a], axis=1)

    def drift(self, x, a) -> np.ndarray:
        """Noise-free next state; accepts batches (P, n_x), (P, n_a)."""
        single = np.asarray(x).ndim == 1
        eta = self.eta(x, a)
        vals = self.drift_iset.eval_monomials(eta) @ self.drift_coeffs.T
        return vals[0] if single else vals

    def features(self, x, a) -> np.ndarray:
        single = np.asarray(x).ndim == 1
        eta = self.eta(x, a)
        vals = self.feat_iset.eval_monomials(eta) @ self.feat_coeffs.T
        return vals[0] if single else vals

    def stage_cost(self, cost: CostParams, x, a):
        vals = self.features(x, a) @ cost.theta_ell
        return vals


def step(model: SystemModel, x, a, rng: np.random.Generator) -> np.ndarray:
    """One stochastic transition, clipped into the state box."""
    x = np.asarray(x, dtype=float)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if not model.state_space.contains(x):
        raise ValueError(f"state {x} outside state space")
    if not model.action_space.contains(a):
        raise ValueError(f"action {a} outside action space")
    w = sample_truncated_gaussian(model.process_noise, rng)
    nxt = model.drift(x, a) + w
    clipped = model.state_space.clip(nxt)
    if np.any(clipped != nxt):
        log.debug("state clipped: %s -> %s", nxt, clipped)
    return clipped


def conditional_poly_expectation(model: SystemModel, r_index, x, a) -> float:
    """Exact E[(x')^d | x, a] for x' = drift(x,a) + w, by binomial expansion.

    Exact because the drift is evaluated pointwise and the independent
    process-noise components have exact raw moments.
    """
    d = np.atleast_1d(np.asarray(r_index, dtype=np.int64))
    if d.shape[0] != model.n_x:
        raise ValueError("r_index dimension must equal n_x")
    f = model.drift(x, a)
    wmom = NoiseModel(
        kind="truncated_gaussian",
        mean=model.process_noise.mean,
        std=model.process_noise.std,
        max_degree=max(1, int(d.max())),
        bound=model.process_noise.bound,
    ).moment_table()
    out = 1.0
    for j, dj in enumerate(d.tolist()):
        s = 0.0
        for k in range(dj + 1):
            s += comb(dj, k) * f[j] ** k * wmom[j, dj - k]
        out *= s
    return float(out)


def conditional_moment_matrix(
    model: SystemModel, r_iset: MultiIndexSet, points: np.ndarray
) -> np.ndarray:
    """E[r_i(x') | eta_j] for all r indices and points; shape (P, D_V)."""
    if r_iset.dimension != model.n_x:
        raise ValueError("r basis dimension must equal n_x")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x = pts[:, : model.n_x]
    a = pts[:, model.n_x :]
    f = model.drift(x, a)  # (P, n_x)
    max_deg = int(r_iset.exponents.max()) if len(r_iset) else 0
    wmom = NoiseModel(
        kind="truncated_gaussian",
        mean=model.process_noise.mean,
        std=model.process_noise.std,
        max_degree=max(1, max_deg),
        bound=model.process_noise.bound,
    ).moment_table()
    # per-axis E[(f_j + w_j)^p] for p = 0..max_deg, shape (P, n_x, max_deg+1)
    axis_mom = np.zeros((pts.shape[0], model.n_x, max_deg + 1))
    axis_mom[:, :, 0] = 1.0
    for p in range(1, max_deg + 1):
        acc = np.zeros((pts.shape[0], model.n_x))
        for k in range(p + 1):
            acc += comb(p, k) * f ** k * wmom[None, :, p - k]
        axis_mom[:, :, p] = acc
    exps = r_iset.exponents
    out = np.ones((pts.shape[0], len(r_iset)))
    for i in range(len(r_iset)):
        for j in range(model.n_x):
            out[:, i] *= axis_mom[:, j, exps[i, j]]
    return out


def _poly_coeffs_to_iset(
    terms: dict[tuple[int, ...], float], iset: MultiIndexSet
) -> np.ndarray:
    row = np.zeros(len(iset))
    for exp, c in terms.items():
        row[iset.position(exp)] = c
    return row


def make_linear_system() -> SystemModel:
    """Double integrator: x+ = A x + B u + w, quadratic features, alpha = 0.9."""
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.0], [0.1]])
    iset = enumerate_indices(3, 1)  # (x1, x2, u), degree 1
    drift = np.zeros((2, len(iset)))
    for i in range(2):
        drift[i, iset.position((1, 0, 0))] = A[i, 0]
        drift[i, iset.position((0, 1, 0))] = A[i, 1]
        drift[i, iset.position((0, 0, 1))] = B[i, 0]
    feat_iset = enumerate_indices(3, 2)
    feats = np.stack(
        [
            _poly_coeffs_to_iset({(2, 0, 0): 1.0}, feat_iset),
            _poly_coeffs_to_iset({(0, 2, 0): 1.0}, feat_iset),
            _poly_coeffs_to_iset({(0, 0, 2): 1.0}, feat_iset),
        ]
    )
    return SystemModel(
        name="linear",
        n_x=2,
        n_a=1,
        state_space=BoxSpace(lo=[-1.0, -1.0], hi=[1.0, 1.0]),
        action_space=BoxSpace(lo=[-1.0], hi=[1.0]),
        drift_iset=iset,
        drift_coeffs=drift,
        process_noise=TruncatedGaussian(mean=[0.0, 0.0], std=[0.01, 0.01], bound=0.1),
        feat_iset=feat_iset,
        feat_coeffs=feats,
        discount=0.9,
        lin_A=A,
        lin_B=B,
    )


TEMP_HEAT_CAPACITY = 500.0
TEMP_EMISSIVITY = 0.9
TEMP_STEFAN_BOLTZMANN = 5.67e-8
TEMP_AREA = 0.1
TEMP_CONVECTION = 10.0
TEMP_ENV = 293.0
TEMP_DT = 1.0
TEMP_X_REF = 0.75
TEMP_U_REF = -1.0


def temperature_physical_step(T: float, P_in: float) -> float:
    """Physical-space temperature update; reference for the normalized coefficients."""
    return T + TEMP_DT / TEMP_HEAT_CAPACITY * (
        P_in
        - TEMP_CONVECTION * TEMP_AREA * (T - TEMP_ENV)
        - TEMP_EMISSIVITY * TEMP_STEFAN_BOLTZMANN * TEMP_AREA * (T ** 4 - TEMP_ENV ** 4)
    )


def _temperature_drift_coeffs() -> tuple[np.ndarray, float]:
    """Normalized-coordinate drift x+ = sum a_i x^i + b u, from the physics."""
    from numpy.polynomial import polynomial as P

    # T(x) = 100 x + 300; expand T^4 in x.
    Tx = np.array([300.0, 100.0])
    T4 = P.polypow(Tx, 4)
    ax = np.zeros(5)
    ax += np.pad(Tx, (0, 3))  # T term
    ax -= TEMP_DT / TEMP_HEAT_CAPACITY * TEMP_CONVECTION * TEMP_AREA * (
        np.pad(Tx, (0, 3)) - np.array([TEMP_ENV, 0, 0, 0, 0])
    )
    ax -= (
        TEMP_DT
        / TEMP_HEAT_CAPACITY
        * TEMP_EMISSIVITY
        * TEMP_STEFAN_BOLTZMANN
        * TEMP_AREA
        * (T4 - np.array([TEMP_ENV ** 4, 0, 0, 0, 0]))
    )
    # back to x coordinates: x+ = (T+ - 300)/100
    ax[0] -= 300.0
    ax /= 100.0
    b = TEMP_DT / TEMP_HEAT_CAPACITY * 1000.0 / 100.0
    return ax, b


def make_temperature_system() -> SystemModel:
    """Nonlinear temperature control system in normalized coordinates."""
    ax, b = _temperature_drift_coeffs()
    iset = enumerate_indices(2, 4)  # (x, u)
    drift = np.zeros((1, len(iset)))
    for i, c in enumerate(ax):
        drift[0, iset.position((i, 0))] = c
    drift[0, iset.position((0, 1))] = b
    feat_iset = enumerate_indices(2, 2)
    feats = np.stack(
        [
            _poly_coeffs_to_iset(
                {(0, 0): TEMP_X_REF ** 2, (1, 0): -2 * TEMP_X_REF, (2, 0): 1.0}, feat_iset
            ),
            _poly_coeffs_to_iset(
                {(0, 0): TEMP_U_REF ** 2, (0, 1): -2 * TEMP_U_REF, (0, 2): 1.0}, feat_iset
            ),
        ]
    )
    return SystemModel(
        name="temperature",
        n_x=1,
        n_a=1,
        state_space=BoxSpace(lo=[-1.0], hi=[1.0]),
        action_space=BoxSpace(lo=[-1.0], hi=[1.0]),
        drift_iset=iset,
        drift_coeffs=drift,
        process_noise=TruncatedGaussian(mean=[0.0], std=[0.01], bound=0.1),
        feat_iset=feat_iset,
        feat_coeffs=feats,
        discount=0.9,
    )


SYSTEM_PRESETS = {
    "linear": make_linear_system,
    "temperature": make_temperature_system,
}
