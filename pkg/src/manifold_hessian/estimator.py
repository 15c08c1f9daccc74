"""Local PCA plus quadratic least-squares Hessian estimation.

At a query point z the pipeline is

1. collect the closed eps-ball neighbours of z,
2. take the top-d left singular vectors U of the differences x_j - z
   (no mean centring),
3. project: q_j = U^T (x_j - z),
4. build the design matrix [1 | y | y*y | y_s*y_t (s < t, row-major)],
5. solve the least-squares problem by QR,
6. unpack the coefficient vector G into f(z), gradient and Hessian.

The Hessian block of G stores the diagonal first, with a factor 1/2
(``G[d+i] = H_ii / 2``), followed by the off-diagonal entries H_st in
row-major upper-triangular order.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.linalg import qr, solve_triangular
from scipy.spatial import cKDTree

from .errors import (
    BadLength,
    DegenerateOverlap,
    IllConditioned,
    RankDeficient,
    TooFewNeighbors,
    ValidationError,
)

RANK_TOL = 1e-10
COND_LIMIT = 1e12
OVERLAP_TOL = 1e-8


def n_coefficients(d):
    """Number of design-matrix columns, 1 + 2d + d(d-1)/2."""
    return 1 + 2 * d + d * (d - 1) // 2


def min_neighbors(d):
    """Smallest neighbourhood for which Z^T Z can be invertible."""
    return 1 + d + d * (d + 1) // 2


# ---------------------------------------------------------------------------
# index map of the Hessian block


def hess_block_index(i, j, d):
    """1-based position of H_ij (i < j) inside the Hessian block of G.

    The block holds the d halved diagonal entries, then the off-diagonal
    pairs (1,2), (1,3), ..., (1,d), (2,3), ..., (d-1,d), so pair (i, j)
    sits after d + sum_{r<i} (d - r) entries.
    """
    if not 1 <= i < j <= d:
        raise ValueError(f"need 1 <= i < j <= d, got ({i}, {j}) with d={d}")
    return d + (i - 1) * d - (i - 1) * i // 2 + (j - i)


def paper_hess_index(i, j, d):
    """The closed form d + j - i + (i-1)(d-(i-1)) for the same position.

    It agrees with :func:`hess_block_index` for d <= 3 and collides for
    d >= 4 (for example (2,4) and (3,4) both map to 9 when d = 4), so it is
    kept for reference only.
    """
    return d + j - i + (i - 1) * (d - (i - 1))


def pack_hessian(H):
    """Hessian block (length d + d(d-1)/2) of a symmetric matrix."""
    H = np.asarray(H, dtype=float)
    d = H.shape[0]
    out = np.empty(d + d * (d - 1) // 2)
    out[:d] = 0.5 * np.diag(H)
    for i in range(1, d + 1):
        for j in range(i + 1, d + 1):
            out[hess_block_index(i, j, d) - 1] = H[i - 1, j - 1]
    return out


# ---------------------------------------------------------------------------
# result types


@dataclass(frozen=True, eq=False)
class LocalFit:
    """Intermediate products of the fit at one query point."""

    center: np.ndarray
    eps: float
    neighbor_idx: np.ndarray
    U: np.ndarray
    Q: np.ndarray
    Z: np.ndarray
    cond: float
    rank: int

    @property
    def k(self):
        return len(self.neighbor_idx)


@dataclass(frozen=True, eq=False)
class HessianEstimate:
    """Function value, gradient and Hessian in the basis U.

    Only the upper triangle of the Hessian is stored; :attr:`hess` mirrors
    it so the returned matrix is exactly symmetric.
    """

    f0: float
    grad: np.ndarray
    hess_upper: np.ndarray
    U: np.ndarray = None
    k_z: int = 0
    cond: float = math.nan

    @property
    def hess(self):
        H = self.hess_upper
        return H + H.T - np.diag(np.diag(H))

    @property
    def d(self):
        return len(self.grad)

    def with_basis(self, U, k_z, cond):
        return HessianEstimate(self.f0, self.grad, self.hess_upper, U, k_z, cond)

    def to_dict(self):
        return {
            "f0": float(self.f0),
            "grad": [float(g) for g in self.grad],
            "hess": self.hess.tolist(),
            "k_z": int(self.k_z),
            "cond": float(self.cond),
            "basis": None if self.U is None else self.U.tolist(),
        }


@dataclass(frozen=True)
class ErrorRecord:
    e_f: float
    e_grad: float
    e_hess_frob: float
    e_trace: float


# ---------------------------------------------------------------------------
# neighbours


def _points(cloud):
    return np.asarray(getattr(cloud, "points", cloud), dtype=float)


class NeighborIndex:
    """k-d tree over a fixed point set answering closed-ball queries.

    The tree is searched with a slightly inflated radius and the candidates
    are then filtered with the same distance test as the brute-force scan,
    so both return identical index sets.
    """

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float)
        self._tree = cKDTree(self.points)

    def query(self, z, eps):
        z = np.asarray(z, dtype=float)
        cand = self._tree.query_ball_point(z, eps * (1 + 1e-9) + 1e-300)
        cand = np.asarray(sorted(cand), dtype=np.intp)
        if cand.size == 0:
            return cand
        dist = np.linalg.norm(self.points[cand] - z, axis=1)
        return cand[dist <= eps]


def epsilon_neighbors(cloud, z, eps, index=None):
    """Ascending indices of the points with ||x_i - z|| <= eps.

    Parameters
    ----------
    cloud : PointCloud or (n, p) array
    z : (p,) array
    eps : float
        Ball radius; the ball is closed.
    index : NeighborIndex, optional
        Accelerator built on the same points.  Without it a brute-force scan
        is used.
    """
    if not eps > 0:
        raise ValidationError("eps must be positive", key="eps")
    if index is not None:
        return index.query(z, eps)
    X = _points(cloud)
    dist = np.linalg.norm(X - np.asarray(z, dtype=float), axis=1)
    return np.flatnonzero(dist <= eps)


# ---------------------------------------------------------------------------
# pipeline stages


def local_pca(cloud, neighbor_idx, z, d):
    """Top-d left singular vectors of the uncentred differences x_j - z.

    Each column is signed so that its largest-magnitude entry is positive.

    Raises
    ------
    RankDeficient
        If fewer than d neighbours are given or sigma_d / sigma_1 < 1e-10.
    """
    X = _points(cloud)[np.asarray(neighbor_idx, dtype=np.intp)]
    if X.shape[0] < d:
        raise RankDeficient(f"{X.shape[0]} neighbours cannot span {d} dimensions")
    D = (X - np.asarray(z, dtype=float)).T
    W, s, _ = np.linalg.svd(D, full_matrices=False)
    if len(s) < d or s[0] == 0 or s[d - 1] / s[0] < RANK_TOL:
        raise RankDeficient("degenerate neighbourhood: too few independent directions")
    U = W[:, :d]
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(d)])
    return U * signs


def project(U, cloud, neighbor_idx, z):
    """Local coordinates q_j = U^T (x_j - z), one row per neighbour."""
    X = _points(cloud)[np.asarray(neighbor_idx, dtype=np.intp)]
    return (X - np.asarray(z, dtype=float)) @ U


def build_design_matrix(Q):
    """Columns [1 | y_1..y_d | y_1^2..y_d^2 | y_s y_t for s < t (row-major)]."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    k, d = Q.shape
    iu, ju = np.triu_indices(d, 1)
    return np.hstack([np.ones((k, 1)), Q, Q**2, Q[:, iu] * Q[:, ju]])


def fit_diagnostics(Z):
    """cond(Z^T Z) of the raw and column-scaled design, and the numerical rank."""
    Z = np.asarray(Z, dtype=float)
    s = np.linalg.svd(Z, compute_uv=False)
    raw = (s[0] / s[-1]) ** 2 if s[-1] > 0 else math.inf
    norms = np.linalg.norm(Z, axis=0)
    if np.any(norms == 0):
        return raw, math.inf, int(np.sum(s > RANK_TOL * s[0]))
    ss = np.linalg.svd(Z / norms, compute_uv=False)
    scaled = (ss[0] / ss[-1]) ** 2 if ss[-1] > 0 else math.inf
    rank = int(np.sum(ss > RANK_TOL * ss[0]))
    return raw, scaled, rank


def solve_fit(Z, fvals):
    """Least-squares coefficients G minimising ||fvals - Z G||.

    Columns are scaled to unit norm before a QR factorisation, which removes
    the eps-dependent spread of column magnitudes without changing the
    minimiser.  Z^T Z is never formed.

    Raises
    ------
    TooFewNeighbors
        If Z has fewer rows than 1 + d + d(d+1)/2.
    IllConditioned
        If the scaled design has cond(Z^T Z) > 1e12 or is rank deficient.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    fvals = np.asarray(fvals, dtype=float)
    k, m = Z.shape
    if fvals.shape != (k,):
        raise BadLength(f"fvals has shape {fvals.shape}, expected ({k},)")
    if k < m:
        raise TooFewNeighbors(f"{k} neighbours, need at least {m}")
    _, scaled, rank = fit_diagnostics(Z)
    if rank < m or not scaled <= COND_LIMIT:
        raise IllConditioned(f"design matrix ill-conditioned (scaled cond(Z^T Z) = {scaled:.3e})")
    norms = np.linalg.norm(Z, axis=0)
    Qz, R = qr(Z / norms, mode="economic")
    G = solve_triangular(R, Qz.T @ fvals)
    return G / norms


def extract(G, d):
    """Unpack G into (f0, grad, Hessian) as a basis-free :class:`HessianEstimate`."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 1 or len(G) != n_coefficients(d):
        raise BadLength(f"G has length {G.size}, expected {n_coefficients(d)} for d={d}")
    upper = np.diag(2.0 * G[d + 1 : 2 * d + 1])
    for i in range(1, d + 1):
        for j in range(i + 1, d + 1):
            upper[i - 1, j - 1] = G[d + hess_block_index(i, j, d)]
    return HessianEstimate(float(G[0]), G[1 : d + 1].copy(), upper)


def local_fit(cloud, z, eps, d, basis=None, index=None):
    """Neighbours, basis, projected coordinates and design matrix at z."""
    z = np.asarray(z, dtype=float)
    idx = epsilon_neighbors(cloud, z, eps, index=index)
    if len(idx) < min_neighbors(d):
        raise TooFewNeighbors(
            f"{len(idx)} neighbours within eps={eps}, need at least {min_neighbors(d)}"
        )
    U = local_pca(cloud, idx, z, d) if basis is None else np.asarray(basis, dtype=float)
    Q = project(U, cloud, idx, z)
    Z = build_design_matrix(Q)
    raw, _, rank = fit_diagnostics(Z)
    return LocalFit(z, float(eps), idx, U, Q, Z, raw, rank)


def estimate_at(cloud, fvals, z, eps, d, basis=None, index=None):
    """Estimate f(z), its gradient and Hessian from samples.

    Parameters
    ----------
    cloud : PointCloud or (n, p) array
    fvals : (n,) array
        Function values at the cloud points.
    z : (p,) array
        Query point.
    eps : float
        Neighbourhood radius.
    d : int
        Intrinsic dimension.
    basis : (p, d) array, optional
        Orthonormal basis to use instead of local PCA.
    index : NeighborIndex, optional
        Accelerator for the neighbour query.

    Returns
    -------
    HessianEstimate
        Expressed in the basis stored in its ``U`` attribute.
    """
    fvals = np.asarray(fvals, dtype=float)
    n = _points(cloud).shape[0]
    if fvals.shape != (n,):
        raise BadLength(f"fvals has shape {fvals.shape}, expected ({n},)")
    fit = local_fit(cloud, z, eps, d, basis=basis, index=index)
    G = solve_fit(fit.Z, fvals[fit.neighbor_idx])
    return extract(G, d).with_basis(fit.U, fit.k, fit.cond)


# ---------------------------------------------------------------------------
# comparison with ground truth


def align_frames(U, E):
    """Orthogonal R minimising ||U R - E||_F.

    Raises
    ------
    DegenerateOverlap
        If the smallest singular value of U^T E is below 1e-8.
    """
    M = np.asarray(U, dtype=float).T @ np.asarray(E, dtype=float)
    A, s, Bt = np.linalg.svd(M)
    if s[-1] < OVERLAP_TOL:
        raise DegenerateOverlap(f"bases barely overlap (sigma_min = {s[-1]:.2e})")
    return A @ Bt


def estimate_error(est, truth, R):
    """Errors of an estimate against (f, grad, hess) given in a frame E.

    ``R`` maps the estimate's basis onto E (see :func:`align_frames`).
    """
    f, grad, hess = truth
    R = np.asarray(R, dtype=float)
    H = est.hess
    return ErrorRecord(
        e_f=abs(est.f0 - f),
        e_grad=float(np.linalg.norm(R.T @ est.grad - grad)),
        e_hess_frob=float(np.linalg.norm(R.T @ H @ R - hess)),
        e_trace=abs(float(np.trace(H) - np.trace(hess))),
    )
