"""Multi-index bookkeeping and polynomial bases on box domains.

Multi-index sets are ordered in graded lexicographic order: ascending total
degree, ties broken by plain lexicographic comparison of the exponent vector
(so in 2-D the degree-1 block reads (0,1), (1,0); the rightmost exponent
varies fastest).  Every moment vector and deconvolution matrix in this
package uses this layout, so serialized moment vectors are only portable
between builds that share the convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

DEFAULT_COND_LIMIT = 1e12


def enumerate_indices(dimension: int, max_degree: int) -> "MultiIndexSet":
    """All multi-indices with total degree <= max_degree, graded-lex ordered."""
    if dimension < 1:
        raise ValueError(f"dimension must be >= 1, got {dimension}")
    if max_degree < 0:
        raise ValueError(f"max_degree must be >= 0, got {max_degree}")

    def gen(dim, deg):
        if dim == 1:
            yield (deg,)
            return
        for first in range(deg + 1):
            for rest in gen(dim - 1, deg - first):
                yield (first,) + rest

    indices = []
    for deg in range(max_degree + 1):
        block = sorted(gen(dimension, deg))
        indices.extend(block)
    exps = np.array(indices, dtype=np.int64).reshape(len(indices), dimension)
    return MultiIndexSet(dimension=dimension, max_degree=max_degree, exponents=exps)


@dataclass(frozen=True)
class MultiIndexSet:
    """Ordered set of exponent vectors; rows of ``exponents`` are the multi-indices."""

    dimension: int
    max_degree: int
    exponents: np.ndarray  # (D, dimension) int array, graded-lex order

    def __post_init__(self):
        exps = np.asarray(self.exponents, dtype=np.int64)
        if exps.ndim != 2 or exps.shape[1] != self.dimension:
            raise ValueError("exponent array shape inconsistent with dimension")
        if np.any(exps < 0):
            raise ValueError("negative exponent")
        object.__setattr__(self, "exponents", exps)
        exps.setflags(write=False)

    def __len__(self) -> int:
        return self.exponents.shape[0]

    @property
    def cardinality(self) -> int:
        return len(self)

    def degrees(self) -> np.ndarray:
        return self.exponents.sum(axis=1)

    def eval_monomials(self, points: np.ndarray) -> np.ndarray:
        """Monomial values at ``points`` of shape (P, dim) or (dim,); returns (P, D) or (D,)."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dimension:
            raise ValueError(
                f"point dimension {pts.shape[1]} != basis dimension {self.dimension}"
            )
        vals = np.prod(pts[:, None, :] ** self.exponents[None, :, :], axis=2)
        return vals[0] if single else vals

    def position(self, index: tuple[int, ...]) -> int:
        """Position of a multi-index in the ordering."""
        target = np.asarray(index, dtype=np.int64)
        hits = np.nonzero((self.exponents == target).all(axis=1))[0]
        if hits.size == 0:
            raise KeyError(f"multi-index {tuple(index)} not in set")
        return int(hits[0])


def multi_binomial(d, d_prime) -> int:
    """Componentwise product of binomial coefficients C(d_j, d'_j)."""
    d = np.asarray(d, dtype=np.int64)
    dp = np.asarray(d_prime, dtype=np.int64)
    if d.shape != dp.shape:
        raise ValueError("multi-index dimension mismatch")
    out = 1
    for a, b in zip(d.tolist(), dp.tolist()):
        out *= comb(a, b) if b <= a else 0
        if out == 0:
            return 0
    return out


@dataclass(frozen=True)
class BasisChangeMatrix:
    """B with phi = B @ phi_mono for a basis sharing the monomial index set."""

    matrix: np.ndarray
    cond_limit: float = DEFAULT_COND_LIMIT

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("change-of-basis matrix must be square")
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > self.cond_limit:
            raise ValueError(f"change-of-basis matrix ill-conditioned (cond={cond:.3e})")
        object.__setattr__(self, "matrix", m)
        m.setflags(write=False)

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)


def chebyshev_lobatto_nodes(n: int, lo: float, hi: float) -> np.ndarray:
    """n Chebyshev-Gauss-Lobatto points on [lo, hi], ascending."""
    if n == 1:
        return np.array([(lo + hi) / 2.0])
    k = np.arange(n)
    ref = -np.cos(np.pi * k / (n - 1))  # [-1, 1]
    return lo + (hi - lo) * (ref + 1.0) / 2.0


@dataclass(frozen=True)
class PolyBasis:
    """Monomial or Lagrange-interpolation basis over a box domain."""

    kind: str  # "monomial" | "lagrange"
    index_set: MultiIndexSet
    domain: np.ndarray  # (dim, 2) [lo, hi] per axis
    nodes: np.ndarray | None = None  # (D, dim), lagrange only
    cond_limit: float = DEFAULT_COND_LIMIT
    _change: BasisChangeMatrix = field(init=False, repr=False)

    def __post_init__(self):
        dom = np.asarray(self.domain, dtype=float).reshape(self.index_set.dimension, 2)
        object.__setattr__(self, "domain", dom)
        dom.setflags(write=False)
        if self.kind == "monomial":
            if self.nodes is not None:
                raise ValueError("monomial basis takes no nodes")
            change = BasisChangeMatrix(np.eye(len(self.index_set)), self.cond_limit)
        elif self.kind == "lagrange":
            nodes = np.asarray(self.nodes, dtype=float)
            if nodes.shape != (len(self.index_set), self.index_set.dimension):
                raise ValueError("lagrange basis needs one node per basis element")
            object.__setattr__(self, "nodes", nodes)
            nodes.setflags(write=False)
            vand = self.index_set.eval_monomials(nodes)  # V[k, d] = mono_d(node_k)
            # phi_lag = B phi_mono with B = V^{-T}: cardinal at the nodes.
            change = BasisChangeMatrix(np.linalg.inv(vand).T, self.cond_limit)
        else:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        object.__setattr__(self, "_change", change)

    def __len__(self) -> int:
        return len(self.index_set)

    @property
    def dimension(self) -> int:
        return self.index_set.dimension


def make_monomial_basis(index_set: MultiIndexSet, domain) -> PolyBasis:
    return PolyBasis(kind="monomial", index_set=index_set, domain=np.asarray(domain, float))


def make_lagrange_basis(
    index_set: MultiIndexSet, domain, cond_limit: float = DEFAULT_COND_LIMIT
) -> PolyBasis:
    """Lagrange basis on tensor CGL points, thinned to a unisolvent subset.

    Candidate nodes are the tensor product of (max_degree + 1) CGL points per
    axis; a QR factorization with column pivoting on the Vandermonde picks the
    D best-conditioned nodes.
    """
    from scipy.linalg import qr

    dom = np.asarray(domain, dtype=float).reshape(index_set.dimension, 2)
    axes = [
        chebyshev_lobatto_nodes(index_set.max_degree + 1, lo, hi) for lo, hi in dom
    ]
    grids = np.meshgrid(*axes, indexing="ij")
    candidates = np.stack([g.ravel() for g in grids], axis=1)
    vand = index_set.eval_monomials(candidates)  # (n_cand, D)
    # Pivoted QR on V^T ranks candidate nodes by conditioning.
    _, _, piv = qr(vand.T, pivoting=True)
    chosen = np.sort(piv[: len(index_set)])
    return PolyBasis(
        kind="lagrange",
        index_set=index_set,
        domain=dom,
        nodes=candidates[chosen],
        cond_limit=cond_limit,
    )


def change_of_basis(basis: PolyBasis) -> BasisChangeMatrix:
    """B with phi = B @ phi_mono; identity for the monomial kind."""
    return basis._change


def eval_basis(basis: PolyBasis, point) -> np.ndarray:
    """Basis-element values at ``point`` (or a (P, dim) batch), in index-set order."""
    mono = basis.index_set.eval_monomials(point)
    if basis.kind == "monomial":
        return mono
    return mono @ basis._change.matrix.T


def integrate_monomials_over_box(index_set: MultiIndexSet, domain) -> np.ndarray:
    """Exact integral of each monomial over the box: product of axis integrals."""
    dom = np.asarray(domain, dtype=float).reshape(index_set.dimension, 2)
    exps = index_set.exponents
    k = exps + 1
    lo = dom[:, 0][None, :]
    hi = dom[:, 1][None, :]
    per_axis = (hi ** k - lo ** k) / k
    return np.prod(per_axis, axis=1)


def integrate_basis_over_box(basis: PolyBasis, domain=None) -> np.ndarray:
    """Exact analytic integral of each basis element over the box."""
    dom = basis.domain if domain is None else np.asarray(domain, float)
    d_mono = integrate_monomials_over_box(basis.index_set, dom)
    if basis.kind == "monomial":
        return d_mono
    return basis._change.matrix @ d_mono
