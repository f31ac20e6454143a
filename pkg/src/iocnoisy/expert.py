"""Forward optimal-control solvers used to generate demonstrations and as oracles.

Three experts live here: discounted LQR via a Riccati fixed point (linear
system), certainty-equivalent receding-horizon MPC (temperature system), and
grid value iteration, which doubles as the brute-force oracle for the
acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .systems import CostParams, SystemModel, TruncatedGaussian, truncated_gaussian_moments_1d

RICCATI_MAX_ITERS = 100_000


@dataclass(frozen=True)
class LqrPolicy:
    P: np.ndarray
    K: np.ndarray
    discount: float

    def action(self, model: SystemModel, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = -np.atleast_2d(x) @ self.K.T
        a = np.clip(a, model.action_space.lo, model.action_space.hi)
        return a[0] if single else a

    def action_batch(self, model: SystemModel, X) -> np.ndarray:
        return self.action(model, np.atleast_2d(X))


def solve_discounted_riccati(
    model: SystemModel, cost: CostParams, tol: float = 1e-12
) -> LqrPolicy:
    """Fixed-point iteration of the discounted Riccati map, started at Q_c."""
    if not model.is_linear:
        raise ValueError("discounted Riccati requires a linear model")
    theta = cost.theta_ell
    if theta.shape[0] != model.n_x + model.n_a:
        raise ValueError("expected one quadratic weight per state and action")
    r = theta[model.n_x]
    if r <= 0:
        raise ValueError("control weight must be positive")
    A, B = model.lin_A, model.lin_B
    Qc = np.diag(theta[: model.n_x])
    R = np.diag(theta[model.n_x :])
    alpha = model.discount
    P = Qc.copy()
    for _ in range(RICCATI_MAX_ITERS):
        gain = np.linalg.solve(R + alpha * B.T @ P @ B, B.T @ P @ A)
        P_next = Qc + alpha * A.T @ P @ A - alpha ** 2 * A.T @ P @ B @ gain
        delta = np.max(np.abs(P_next - P))
        P = 0.5 * (P_next + P_next.T)
        if delta < tol:
            K = alpha * np.linalg.solve(R + alpha * B.T @ P @ B, B.T @ P @ A)
            return LqrPolicy(P=P, K=K, discount=alpha)
    raise RuntimeError("Riccati iteration did not converge")


@dataclass(frozen=True)
class MpcPolicy:
    """Certainty-equivalent receding-horizon controller, scalar action.

    The action sequence is seeded per step from a myopic grid, then refined.
    For scalar states the refinement is projected gradient descent with
    adjoint (backward-pass) gradients; otherwise coordinate-descent sweeps
    with a shrinking step.  Only the first action is applied.
    """

    horizon: int = 64
    discount: float = 0.9
    cost: CostParams = None
    n_seed: int = 9
    sweeps: int = 30
    shrink: float = 0.8
    converge_tol: float = 1e-5
    grad_iters: int = 300

    def action(self, model: SystemModel, x) -> np.ndarray:
        return self.action_batch(model, np.atleast_2d(x))[0]

    def action_batch(self, model: SystemModel, X) -> np.ndarray:
        return mpc_action_batch(self, model, np.atleast_2d(X))


def _separable_scalar_drift(model: SystemModel):
    """(ax, b) with drift = poly(x; ax) + b*u for scalar state/action, else None."""
    if model.n_x != 1 or model.n_a != 1:
        return None
    exps = model.drift_iset.exponents
    coeffs = model.drift_coeffs
    nz = coeffs[0] != 0.0
    pure_x = exps[:, 1] == 0
    lin_u = (exps[:, 1] == 1) & (exps.sum(axis=1) == 1)
    if not np.all(pure_x[nz] | lin_u[nz]):
        return None
    pure_x &= nz
    lin_u &= nz
    deg = int(exps[pure_x, 0].max()) if pure_x.any() else 0
    ax = np.zeros(deg + 1)
    for row, c in zip(exps[pure_x], coeffs[0, pure_x]):
        ax[row[0]] += c
    b = float(coeffs[0, lin_u].sum()) if lin_u.any() else 0.0
    return ax, b


def _fast_drift(model: SystemModel):
    exps = model.drift_iset.exponents
    coeffs = model.drift_coeffs

    def f(x, u):
        # x: (P, n_x), u: (P,) scalar action
        eta = np.concatenate([x, u[:, None]], axis=1)
        mono = np.prod(eta[:, None, :] ** exps[None, :, :], axis=2)
        return mono @ coeffs.T

    sep = _separable_scalar_drift(model)
    if sep is not None:
        ax, b = sep
        deg = len(ax) - 1

        def f1(x, u):
            xs = x[:, 0]
            acc = np.full_like(xs, ax[deg])
            for k in range(deg - 1, -1, -1):
                acc = acc * xs + ax[k]
            return (acc + b * u)[:, None]

        return f1
    return f


def _fast_stage_cost(model: SystemModel, cost: CostParams):
    coeffs = cost.theta_ell @ model.feat_coeffs  # combined polynomial
    exps = model.feat_iset.exponents

    def ell(x, u):
        eta = np.concatenate([x, u[:, None]], axis=1)
        mono = np.prod(eta[:, None, :] ** exps[None, :, :], axis=2)
        return mono @ coeffs

    return ell


def _poly_horner(coef: np.ndarray, z: np.ndarray) -> np.ndarray:
    acc = np.full_like(z, coef[-1])
    for k in range(len(coef) - 2, -1, -1):
        acc = acc * z + coef[k]
    return acc


def _mpc_gradient_refine(
    policy: MpcPolicy, model: SystemModel, X: np.ndarray, U: np.ndarray
) -> np.ndarray:
    """Projected Adam on the full action sequences, adjoint-pass gradients.

    Scalar-state, scalar-action, drift separable as poly(x) + b*u.  The clip
    into the state box propagates a zero derivative where it is active.
    """
    ax, b = _separable_scalar_drift(model)
    dax = ax[1:] * np.arange(1, len(ax))
    lo, hi = float(model.action_space.lo[0]), float(model.action_space.hi[0])
    s_lo, s_hi = float(model.state_space.lo[0]), float(model.state_space.hi[0])
    H, P = U.shape
    disc = policy.discount ** np.arange(H)
    c = policy.cost.theta_ell @ model.feat_coeffs
    fe = model.feat_iset.exponents
    xi, uj = fe[:, 0], fe[:, 1]
    keep = c != 0.0
    cx, cxi, cuj = c[keep], xi[keep], uj[keep]
    x0 = X[:, 0]

    def cost_and_grad(U):
        xs = np.empty((H + 1, P))
        mask = np.empty((H, P))
        xs[0] = x0
        for t in range(H):
            z = _poly_horner(ax, xs[t]) + b * U[t]
            xs[t + 1] = np.clip(z, s_lo, s_hi)
            mask[t] = (z > s_lo) & (z < s_hi)
        Xf = xs[:H]
        max_i, max_j = int(cxi.max()), int(cuj.max())
        Xp = np.stack([Xf ** k for k in range(max_i + 1)])
        Up = np.stack([U ** k for k in range(max_j + 1)])
        ell = np.einsum("d,dtp->tp", cx, Xp[cxi] * Up[cuj])
        dldx = np.einsum(
            "d,dtp->tp", cx * cxi, Xp[np.maximum(cxi - 1, 0)] * Up[cuj]
        )
        dldu = np.einsum(
            "d,dtp->tp", cx * cuj, Xp[cxi] * Up[np.maximum(cuj - 1, 0)]
        )
        J = disc @ ell
        g = np.empty((H, P))
        lam = np.zeros(P)
        for t in range(H - 1, -1, -1):
            g[t] = disc[t] * dldu[t] + lam * b * mask[t]
            lam = disc[t] * dldx[t] + lam * _poly_horner(dax, xs[t]) * mask[t]
        return J, g

    lr = 0.02 * (hi - lo)
    m = np.zeros_like(U)
    v = np.zeros_like(U)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for it in range(1, policy.grad_iters + 1):
        _, g = cost_and_grad(U)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** it)
        vh = v / (1 - b2 ** it)
        U_new = np.clip(U - lr * mh / (np.sqrt(vh) + eps), lo, hi)
        moved = np.max(np.abs(U_new - U))
        U = U_new
        if moved < policy.converge_tol * 1e-2:
            break
    return U


def mpc_action_batch(policy: MpcPolicy, model: SystemModel, X: np.ndarray) -> np.ndarray:
    """First optimized action for each row of X; always inside the action box."""
    if model.n_a != 1:
        raise NotImplementedError("MPC inner solver supports scalar actions")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = X.shape[0]
    H = policy.horizon
    alpha = policy.discount
    lo, hi = float(model.action_space.lo[0]), float(model.action_space.hi[0])
    drift = _fast_drift(model)
    stage = _fast_stage_cost(model, policy.cost)
    s_lo, s_hi = model.state_space.lo, model.state_space.hi
    disc = alpha ** np.arange(H)

    # Seed: per step, best of an n_seed action grid on the myopic stage cost.
    seeds = np.linspace(lo, hi, policy.n_seed)
    U = np.empty((H, P))
    states = np.empty((H + 1, P, model.n_x))
    costs = np.empty((H, P))
    states[0] = X
    for k in range(H):
        cands = np.stack([stage(states[k], np.full(P, s)) for s in seeds])  # (n_seed, P)
        best = np.argmin(cands, axis=0)
        U[k] = seeds[best]
        costs[k] = cands[best, np.arange(P)]
        states[k + 1] = np.clip(drift(states[k], U[k]), s_lo, s_hi)

    if _separable_scalar_drift(model) is not None:
        U = _mpc_gradient_refine(policy, model, X, U)
        return U[0][:, None]

    def tail(k, u_k):
        """Discounted tail cost from step k with U[k] replaced by u_k, plus new tail states/costs."""
        t_states = np.empty((H - k + 1, P, model.n_x))
        t_costs = np.empty((H - k, P))
        t_states[0] = states[k]
        u = u_k
        for t in range(k, H):
            t_costs[t - k] = stage(t_states[t - k], u)
            t_states[t - k + 1] = np.clip(drift(t_states[t - k], u), s_lo, s_hi)
            if t + 1 < H:
                u = U[t + 1]
        J = disc[k:] @ t_costs
        return J, t_states, t_costs

    delta0 = (hi - lo) / 8.0
    for sweep in range(policy.sweeps):
        delta = delta0 * policy.shrink ** sweep
        moved = 0.0
        for k in range(H):
            J_cur = disc[k:] @ costs[k:]
            u_minus = np.clip(U[k] - delta, lo, hi)
            u_plus = np.clip(U[k] + delta, lo, hi)
            J_m, st_m, c_m = tail(k, u_minus)
            J_p, st_p, c_p = tail(k, u_plus)
            choice = np.argmin(np.stack([J_cur, J_m, J_p]), axis=0)
            take_m = choice == 1
            take_p = choice == 2
            if take_m.any():
                U[k, take_m] = u_minus[take_m]
                states[k:, take_m] = st_m[:, take_m]
                costs[k:, take_m] = c_m[:, take_m]
            if take_p.any():
                U[k, take_p] = u_plus[take_p]
                states[k:, take_p] = st_p[:, take_p]
                costs[k:, take_p] = c_p[:, take_p]
            moved = max(moved, delta if (take_m.any() or take_p.any()) else 0.0)
        if moved < policy.converge_tol:
            break
    return U[0][:, None]


def truncated_noise_quadrature(
    dist: TruncatedGaussian, n_nodes: int = 8
) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre nodes/weights for E[g(w)] under truncated Gaussian noise."""
    from numpy.polynomial.legendre import leggauss
    from scipy.stats import norm

    axes_nodes, axes_weights = [], []
    for mu, s in zip(dist.mean, dist.std):
        t, w = leggauss(n_nodes)
        lo, hi = mu - dist.bound, mu + dist.bound
        nodes = (hi + lo) / 2 + (hi - lo) / 2 * t
        pdf = norm.pdf(nodes, loc=mu, scale=s)
        weights = w * pdf * (hi - lo) / 2
        weights /= weights.sum()
        axes_nodes.append(nodes)
        axes_weights.append(weights)
    grids = np.meshgrid(*axes_nodes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*axes_weights, indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return nodes, weights


@dataclass(frozen=True)
class GridValueFunction:
    state_axes: tuple[np.ndarray, ...]
    action_axes: tuple[np.ndarray, ...]
    values: np.ndarray  # shape = tuple(len(ax) for ax in state_axes)
    discount: float
    residual: float

    def __call__(self, x) -> np.ndarray:
        return multilinear_interp(self.state_axes, self.values, np.atleast_2d(x))


def multilinear_interp(axes, values, pts):
    """Multilinear interpolation of values on a rectilinear grid at pts (P, dim)."""
    idx, frac = [], []
    for d, ax in enumerate(axes):
        i = np.clip(np.searchsorted(ax, pts[:, d]) - 1, 0, len(ax) - 2)
        f = (pts[:, d] - ax[i]) / (ax[i + 1] - ax[i])
        idx.append(i)
        frac.append(np.clip(f, 0.0, 1.0))
    out = np.zeros(pts.shape[0])
    dim = len(axes)
    for corner in range(2 ** dim):
        w = np.ones(pts.shape[0])
        ii = []
        for d in range(dim):
            bit = (corner >> d) & 1
            ii.append(idx[d] + bit)
            w = w * (frac[d] if bit else 1.0 - frac[d])
        out += w * values[tuple(ii)]
    return out


def _grid_points(axes):
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def value_iteration(
    model: SystemModel,
    cost: CostParams,
    state_axes,
    action_axes,
    tol: float = 1e-9,
    max_iters: int = 2000,
    quad_nodes: int = 8,
) -> GridValueFunction:
    """Iterate V <- min_a (ell + alpha E[V(next)]) on a rectilinear grid.

    The process-noise expectation uses Gauss-Legendre quadrature with the
    multilinearly interpolated V; all interpolation weights are precomputed
    once, so each sweep is a gather plus a reduction.
    """
    state_axes = tuple(np.asarray(ax, dtype=float) for ax in state_axes)
    action_axes = tuple(np.asarray(ax, dtype=float) for ax in action_axes)
    S = _grid_points(state_axes)  # (Ns, n_x)
    A = _grid_points(action_axes)  # (Na, n_a)
    Ns, Na = S.shape[0], A.shape[0]
    wn, wq = truncated_noise_quadrature(model.process_noise, quad_nodes)
    Nq = wn.shape[0]

    Sr = np.repeat(S, Na, axis=0)
    Ar = np.tile(A, (Ns, 1))
    ell = model.stage_cost(cost, Sr, Ar).reshape(Ns, Na)
    drift = model.drift(Sr, Ar)  # (Ns*Na, n_x)
    nxt = drift[:, None, :] + wn[None, :, :]  # (Ns*Na, Nq, n_x)
    nxt = np.clip(
        nxt.reshape(-1, model.n_x), model.state_space.lo, model.state_space.hi
    )

    # Precompute interpolation corners/weights for every next state.
    dim = model.n_x
    idx, frac = [], []
    for d, ax in enumerate(state_axes):
        i = np.clip(np.searchsorted(ax, nxt[:, d]) - 1, 0, len(ax) - 2)
        f = np.clip((nxt[:, d] - ax[i]) / (ax[i + 1] - ax[i]), 0.0, 1.0)
        idx.append(i)
        frac.append(f)
    shape = tuple(len(ax) for ax in state_axes)
    corner_flat = []
    corner_w = []
    for corner in range(2 ** dim):
        ii = []
        w = np.ones(nxt.shape[0])
        for d in range(dim):
            bit = (corner >> d) & 1
            ii.append(idx[d] + bit)
            w = w * (frac[d] if bit else 1.0 - frac[d])
        corner_flat.append(np.ravel_multi_index(tuple(ii), shape))
        corner_w.append(w)
    corner_flat = np.stack(corner_flat)  # (2^dim, Ns*Na*Nq)
    corner_w = np.stack(corner_w)

    V = np.zeros(Ns)
    alpha = model.discount
    residual = np.inf
    for _ in range(max_iters):
        Vn = np.zeros(nxt.shape[0])
        for c in range(corner_flat.shape[0]):
            Vn += corner_w[c] * V.reshape(-1)[corner_flat[c]]
        EV = Vn.reshape(Ns * Na, Nq) @ wq  # (Ns*Na,)
        Q = ell + alpha * EV.reshape(Ns, Na)
        V_new = Q.min(axis=1)
        residual = np.max(np.abs(V_new - V))
        V = V_new
        if residual < tol:
            return GridValueFunction(
                state_axes=state_axes,
                action_axes=action_axes,
                values=V.reshape(shape),
                discount=alpha,
                residual=float(residual),
            )
    raise RuntimeError(f"value iteration hit max_iters with residual {residual:.3e}")


def _lookahead_q(V: GridValueFunction, model: SystemModel, cost: CostParams, X, quad_nodes=8):
    """Q(x, a) over the action grid for a batch of states; shape (P, Na)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = _grid_points(V.action_axes)
    wn, wq = truncated_noise_quadrature(model.process_noise, quad_nodes)
    P, Na, Nq = X.shape[0], A.shape[0], wn.shape[0]
    Xr = np.repeat(X, Na, axis=0)
    Ar = np.tile(A, (P, 1))
    ell = model.stage_cost(cost, Xr, Ar)
    drift = model.drift(Xr, Ar)
    nxt = np.clip(
        (drift[:, None, :] + wn[None, :, :]).reshape(-1, model.n_x),
        model.state_space.lo,
        model.state_space.hi,
    )
    EV = multilinear_interp(V.state_axes, V.values, nxt).reshape(P * Na, Nq) @ wq
    return (ell + model.discount * EV).reshape(P, Na)


def greedy_policy(
    V: GridValueFunction,
    model: SystemModel,
    cost: CostParams,
    x,
    chunk: int = 4096,
    quad_nodes: int = 8,
) -> np.ndarray:
    """Argmin of the one-step lookahead over the action grid; ties -> smallest index.

    Batches are processed in chunks to bound the (P * Na * Nq) work arrays.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    A = _grid_points(V.action_axes)
    picks = []
    for start in range(0, X.shape[0], chunk):
        Q = _lookahead_q(V, model, cost, X[start : start + chunk], quad_nodes=quad_nodes)
        picks.append(np.argmin(Q, axis=1))
    a = A[np.concatenate(picks)]
    return a[0] if single else a


@dataclass(frozen=True)
class GreedyGridPolicy:
    """Policy wrapper around a converged grid value function."""

    V: GridValueFunction
    model: SystemModel
    cost: CostParams
    quad_nodes: int = 8

    def action(self, model: SystemModel, x) -> np.ndarray:
        return greedy_policy(self.V, self.model, self.cost, x, quad_nodes=self.quad_nodes)

    def action_batch(self, model: SystemModel, X) -> np.ndarray:
        return greedy_policy(
            self.V, self.model, self.cost, np.atleast_2d(X), quad_nodes=self.quad_nodes
        )


def bellman_gap(V: GridValueFunction, model: SystemModel, cost: CostParams, x, a) -> np.ndarray:
    """psi(x, a) = ell + alpha E[V(next)] - V(x); the complementary-slackness integrand."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    wn, wq = truncated_noise_quadrature(model.process_noise)
    drift = model.drift(x, a)
    nxt = np.clip(
        (drift[:, None, :] + wn[None, :, :]).reshape(-1, model.n_x),
        model.state_space.lo,
        model.state_space.hi,
    )
    EV = multilinear_interp(V.state_axes, V.values, nxt).reshape(x.shape[0], -1) @ wq
    ell = model.stage_cost(cost, x, a)
    return ell + model.discount * EV - multilinear_interp(V.state_axes, V.values, x)
