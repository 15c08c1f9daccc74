"""Closed-form moment integrals, truncated-ball constants and leading Gram
matrices, each paired with an independent quadrature or Monte Carlo
evaluator.

Conventions
-----------
* ``|B^d|`` is the volume of the unit ball and ``|S^{d-1}| = d |B^d|``.
* Sphere integrals are over the unit sphere S^{d-1} with surface measure.
* The truncated unit ball is {|x| < 1, x_d > -(1 - delta)}; ``e_d`` points
  into the manifold, so ``delta = 0`` is the full ball and ``delta -> 1``
  approaches the half ball {x_d > 0}.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import gamma

from ._rng import rng_stream
from .errors import (
    MissingCurvatureData,
    NotSymmetric,
    QuadratureNotConverged,
    UnsupportedPattern,
    ValidationError,
)
from .estimator import hess_block_index, n_coefficients
from .manifolds import unit_ball_volume

__all__ = [
    "unit_ball_volume",
    "sphere_area",
    "BallMomentSpec",
    "NAMED_MOMENTS",
    "ball_moment",
    "mc_moment",
    "truncated_C",
    "mc_truncated_C",
    "GreekSet",
    "greeks",
    "GramOracle",
    "build_L0",
    "block_slices",
    "predicted_orders",
    "sphere_tensor_integral",
    "mc_sphere_tensor_integral",
    "interior_moment_oracle",
    "oracle_table",
]

MC_CHUNK = 1 << 17


def sphere_area(d):
    """Surface area of the unit sphere S^{d-1} in R^d."""
    return 2 * math.pi ** (d / 2) / gamma(d / 2)


def _sphere_monomial_mean(n, exps):
    """E[prod w_i^{a_i}] for w uniform on S^{n-1}, all a_i even."""
    total = sum(exps)
    num = 1.0
    for a in exps:
        num *= _double_factorial(a - 1)
    den = 1.0
    for k in range(0, total, 2):
        den *= n + k
    return num / den


def _double_factorial(k):
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


# ---------------------------------------------------------------------------
# ball and sphere moments


NAMED_MOMENTS = {
    "II_B": ("Ball", (4,)),
    "JI_B": ("Ball", (2, 2)),
    "II_S": ("Sphere", (4,)),
    "JI_S": ("Sphere", (2, 2)),
    "III_S": ("Sphere", (6,)),
    "JJI_S": ("Sphere", (4, 2)),
    "KJI_S": ("Sphere", (2, 2, 2)),
    "JJII_S": ("Sphere", (4, 4)),
}


@dataclass(frozen=True)
class BallMomentSpec:
    """Integral of prod_i (x^i)^{pattern[i]} over a ball or unit sphere.

    ``pattern[i]`` is the exponent of coordinate i+1; missing trailing
    coordinates have exponent 0.  ``r`` only matters for the ball.
    """

    d: int
    pattern: tuple
    domain: str = "Sphere"
    r: float = 1.0

    def __post_init__(self):
        if self.domain not in ("Ball", "Sphere"):
            raise ValidationError(f"unknown domain {self.domain!r}", key="domain")
        if any(int(a) < 0 for a in self.pattern):
            raise ValidationError("exponents must be nonnegative", key="pattern")
        if len(self.pattern) > self.d:
            raise UnsupportedPattern(f"pattern {self.pattern} has more than d={self.d} entries")

    @classmethod
    def named(cls, name, d, r=1.0):
        domain, pattern = NAMED_MOMENTS[name]
        return cls(d, pattern, domain, r)

    @property
    def is_odd(self):
        return any(int(a) % 2 for a in self.pattern)


def ball_moment(spec):
    """Closed-form value of a ball or sphere moment.

    Raises
    ------
    UnsupportedPattern
        For even patterns that are not the volume or one of the named
        integrals in :data:`NAMED_MOMENTS`.
    """
    if spec.is_odd:
        return 0.0
    d = spec.d
    key = tuple(sorted((int(a) for a in spec.pattern if a), reverse=True))
    B = unit_ball_volume(d)
    if spec.domain == "Ball":
        r = spec.r
        table = {
            (): 1.0,
            (4,): 3.0 / ((d + 2) * (d + 4)),
            (2, 2): 1.0 / ((d + 2) * (d + 4)),
        }
        if key not in table:
            raise UnsupportedPattern(f"no closed form for ball pattern {spec.pattern}")
        return table[key] * B * r ** (d + sum(key))
    table = {
        (): float(d),
        (4,): 3.0 / (d + 2),
        (2, 2): 1.0 / (d + 2),
        (6,): 15.0 / ((d + 2) * (d + 4)),
        (4, 2): 3.0 / ((d + 2) * (d + 4)),
        (2, 2, 2): 1.0 / ((d + 2) * (d + 4)),
        (4, 4): 9.0 / ((d + 2) * (d + 4) * (d + 6)),
    }
    if key not in table:
        raise UnsupportedPattern(f"no closed form for sphere pattern {spec.pattern}")
    return table[key] * B


def _monomial(x, pattern):
    out = np.ones(x.shape[0])
    for i, a in enumerate(pattern):
        if a:
            out = out * x[:, i] ** int(a)
    return out


def _mc_mean(draw, n_samples, seed, purpose):
    """Mean and standard error of a scalar integrand drawn chunk by chunk."""
    total = 0.0
    total_sq = 0.0
    done = 0
    chunk = 0
    while done < n_samples:
        m = min(MC_CHUNK, n_samples - done)
        vals = draw(rng_stream(seed, purpose, chunk), m)
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += m
        chunk += 1
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    return mean, math.sqrt(var / (n_samples - 1))


def uniform_sphere(rng, m, d):
    g = rng.standard_normal((m, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def mc_moment(spec, n_samples, seed):
    """Monte Carlo estimate and standard error of a ball or sphere moment.

    Ball integrals use uniform points in the bounding cube with an
    indicator, so they do not rely on the ball volume formula.  Sphere
    integrals average over normalised Gaussian vectors and multiply by the
    surface area.
    """
    if n_samples < 1000:
        raise ValidationError("n_samples must be at least 1000", key="n_samples")
    d = spec.d
    if spec.domain == "Ball":
        r = spec.r
        cube = (2 * r) ** d

        def draw(rng, m):
            x = r * (2 * rng.random((m, d)) - 1)
            inside = np.einsum("ij,ij->i", x, x) <= r * r
            return cube * inside * _monomial(x, spec.pattern)

    else:
        area = sphere_area(d)

        def draw(rng, m):
            return area * _monomial(uniform_sphere(rng, m, d), spec.pattern)

    return _mc_mean(draw, n_samples, seed, ("moment", spec.domain, spec.pattern, d))


# ---------------------------------------------------------------------------
# truncated ball constants

_GL_ORDERS = (16, 32, 64, 128, 256, 512, 1024)


def _gauss_legendre(fun, a, b, tol):
    """Integrate a smooth function on [a, b], doubling the order until two
    consecutive estimates agree to ``tol``."""
    if b <= a:
        return 0.0
    prev = None
    for n in _GL_ORDERS:
        x, w = np.polynomial.legendre.leggauss(n)
        t = 0.5 * (b - a) * x + 0.5 * (b + a)
        val = 0.5 * (b - a) * float(w @ fun(t))
        if prev is not None and abs(val - prev) <= tol:
            return val
        prev = val
    raise QuadratureNotConverged(f"Gauss-Legendre did not reach tol={tol} on [{a}, {b}]")


def truncated_C(d, delta, m, two_k, cross=False, tol=1e-9):
    """C_{m,2k}: integral of x_d^m x_{d-1}^{2k} over the unit truncated ball.

    Writing theta = (sin(phi) w, cos(phi)) with w on S^{d-2}, the radial
    integral is exact and the w integral is a sphere moment, leaving a
    one-dimensional integral in phi.  It is split where the cut plane
    starts to bound the radius so both pieces have smooth integrands.

    Parameters
    ----------
    d : int
        Dimension, at least 2.
    delta : float
        Truncation parameter in [0, 1).
    m, two_k : int
        Exponents of x_d and x_{d-1}; ``two_k`` must be even and
        m + two_k <= 4.
    cross : bool
        Compute C_{0,2,2} instead: the integral of x_{d-1}^2 x_{d-2}^2.
        For d = 2 there is only one tangential coordinate and the value is
        defined as C_{0,4} / 3, the identity that holds for every d >= 3.
    """
    d = int(d)
    if d < 2:
        raise ValidationError("truncated_C needs d >= 2", key="d")
    if not 0.0 <= delta < 1.0:
        raise ValidationError("delta must lie in [0, 1)", key="delta")
    if cross:
        if d == 2:
            return truncated_C(d, delta, 0, 4, tol=tol) / 3.0
        m, tang, w_exps = 0, 4, (2, 2)
    else:
        if two_k % 2 or m < 0 or two_k < 0 or m + two_k > 4:
            raise UnsupportedPattern(f"C_{{{m},{two_k}}} is outside m + 2k <= 4")
        tang, w_exps = two_k, (two_k,) if two_k else ()
    N = d + m + tang
    n = d - 1
    w_int = sphere_area(n) * _sphere_monomial_mean(n, w_exps) if w_exps else sphere_area(n)
    if n == 1:
        # S^0 = {-1, 1}: counting measure
        w_int = 2.0
    c = 1.0 - delta

    def full(phi):
        return np.cos(phi) ** m * np.sin(phi) ** (tang + d - 2) / N

    def cut(phi):
        cphi = np.cos(phi)
        return cphi**m * np.sin(phi) ** (tang + d - 2) * (c / -cphi) ** N / N

    phi_star = math.acos(-c)
    inner = _gauss_legendre(full, 0.0, phi_star, tol * 1e-2)
    outer = _gauss_legendre(cut, phi_star, math.pi, tol * 1e-2)
    return w_int * (inner + outer)


def mc_truncated_C(d, delta, m, two_k, n_samples, seed, cross=False):
    """Monte Carlo estimate of :func:`truncated_C` from uniform points in
    the cube [-1, 1]^d."""
    if cross and d == 2:
        est, se = mc_truncated_C(d, delta, 0, 4, n_samples, seed)
        return est / 3.0, se / 3.0
    cube = 2.0**d

    def draw(rng, size):
        x = 2 * rng.random((size, d)) - 1
        inside = (np.einsum("ij,ij->i", x, x) < 1) & (x[:, -1] > -(1 - delta))
        if cross:
            vals = x[:, d - 2] ** 2 * x[:, d - 3] ** 2
        else:
            vals = x[:, -1] ** m * x[:, d - 2] ** two_k
        return cube * inside * vals

    return _mc_mean(draw, n_samples, seed, ("truncC", d, delta, m, two_k, cross))


@dataclass(frozen=True)
class GreekSet:
    d: int
    delta: float
    eps: float
    C: dict = field(repr=False)
    C00: float
    gamma1: float
    alpha1: float
    alpha2: float
    mu1: float
    mu2: float
    beta1: float
    beta2: float
    beta3: float
    beta4: float


def greeks(d, delta, eps):
    """Normalised truncated-ball moments scaled by powers of eps."""
    keys = [(0, 0), (1, 0), (2, 0), (0, 2), (3, 0), (1, 2), (4, 0), (2, 2), (0, 4)]
    C = {k: truncated_C(d, delta, *k) for k in keys}
    C["022"] = truncated_C(d, delta, 0, 0, cross=True)
    c0 = C[(0, 0)]
    return GreekSet(
        d=d,
        delta=delta,
        eps=eps,
        C=C,
        C00=c0,
        gamma1=eps * C[(1, 0)] / c0,
        alpha1=eps**2 * C[(2, 0)] / c0,
        alpha2=eps**2 * C[(0, 2)] / c0,
        mu1=eps**3 * C[(3, 0)] / c0,
        mu2=eps**3 * C[(1, 2)] / c0,
        beta1=eps**4 * C[(4, 0)] / c0,
        beta2=eps**4 * C[(2, 2)] / c0,
        beta3=eps**4 * C[(0, 4)] / c0,
        beta4=eps**4 * C["022"] / c0,
    )


# ---------------------------------------------------------------------------
# leading Gram matrices


def block_slices(d):
    """Column ranges of the constant, linear, square and cross blocks."""
    return {
        "A": slice(0, 1),
        "B": slice(1, d + 1),
        "C": slice(d + 1, 2 * d + 1),
        "D": slice(2 * d + 1, n_coefficients(d)),
    }


BLOCK_PAIRS = ("AA", "AB", "AC", "AD", "BB", "BC", "BD", "CC", "CD", "DD")


def _pair_col(s, t, d):
    """0-based column of the cross term y_s y_t (1-based s < t)."""
    return d + hess_block_index(s, t, d)


@dataclass(frozen=True, eq=False)
class GramOracle:
    variant: str
    d: int
    eps: float
    matrix: np.ndarray
    params: dict = field(default_factory=dict)

    def block(self, name):
        sl = block_slices(self.d)
        return self.matrix[sl[name[0]], sl[name[1]]]


def build_L0(variant, d, eps, delta=0.0, rho=1.0, grad_rho=None):
    """Leading-order approximation of (1/k) Z^T Z.

    ``variant="TruncatedHeuristic"`` uses the truncated-ball Greeks for a
    neighbourhood whose inward normal is the last coordinate.
    ``variant="InteriorDirect"`` uses alpha = eps^2/(d+2),
    beta = eps^4/((d+2)(d+4)) and the relative density gradient
    grad_rho / rho at an interior point.
    """
    m = n_coefficients(d)
    L = np.zeros((m, m))
    sl = block_slices(d)
    B0, C0 = sl["B"].start, sl["C"].start
    L[0, 0] = 1.0
    if variant == "TruncatedHeuristic":
        if d < 2:
            raise ValidationError("TruncatedHeuristic needs d >= 2", key="d")
        g = greeks(d, delta, eps)
        tang = range(d - 1)
        L[0, B0 + d - 1] = g.gamma1
        L[0, C0 : C0 + d - 1] = g.alpha2
        L[0, C0 + d - 1] = g.alpha1
        for s in tang:
            L[B0 + s, B0 + s] = g.alpha2
            L[B0 + d - 1, C0 + s] = g.mu2
            L[B0 + s, _pair_col(s + 1, d, d)] = g.mu2
        L[B0 + d - 1, B0 + d - 1] = g.alpha1
        L[B0 + d - 1, C0 + d - 1] = g.mu1
        for s in tang:
            for t in tang:
                L[C0 + s, C0 + t] = g.beta3 if s == t else g.beta4
            L[C0 + s, C0 + d - 1] = g.beta2
        L[C0 + d - 1, C0 + d - 1] = g.beta1
        for s in range(1, d + 1):
            for t in range(s + 1, d + 1):
                j = _pair_col(s, t, d)
                L[j, j] = g.beta2 if t == d else g.beta4
        params = {"delta": delta, "greeks": g}
    elif variant == "InteriorDirect":
        if not rho > 0:
            raise ValidationError("rho must be positive", key="rho")
        grad_rho = np.zeros(d) if grad_rho is None else np.asarray(grad_rho, dtype=float)
        if grad_rho.shape != (d,):
            raise ValidationError(f"grad_rho must have length {d}", key="grad_rho")
        a = eps**2 / (d + 2)
        b = eps**4 / ((d + 2) * (d + 4))
        r = grad_rho / rho
        L[0, sl["B"]] = a * r
        L[0, sl["C"]] = a
        L[sl["B"], sl["B"]] = a * np.eye(d)
        L[sl["B"], sl["C"]] = b * r[:, None] * (np.ones((d, d)) + 2 * np.eye(d))
        L[sl["C"], sl["C"]] = b * (np.ones((d, d)) + 2 * np.eye(d))
        L[sl["D"], sl["D"]] = b * np.eye(m - 2 * d - 1)
        params = {"rho": rho, "grad_rho": grad_rho}
    else:
        raise ValidationError(f"unknown variant {variant!r}", key="variant")
    iu = np.triu_indices(m, 1)
    L[(iu[1], iu[0])] = L[iu]
    return GramOracle(variant, d, eps, L, params)


def predicted_orders(d, eps, n, interior=True):
    """Per-block scale of the bias W = L - L0 and of the large deviation
    term, with all hidden constants set to 1.

    The deviation scale is omega = sqrt(log n / (n eps^d)).
    """
    omega = math.sqrt(math.log(n) / (n * eps**d))
    ld = {"AA": 0.0, "AB": eps, "AC": eps**2, "AD": eps**2, "BB": eps**2,
          "BC": eps**3, "BD": eps**3, "CC": eps**4, "CD": eps**4, "DD": eps**4}
    ld = {k: v * omega for k, v in ld.items()}
    if interior:
        w = {"AA": 0, "AB": 3, "AC": 4, "AD": 4, "BB": 4,
             "BC": 5, "BD": 4, "CC": 6, "CD": 6, "DD": 6}
    else:
        w = {"AA": 0, "AB": 2, "AC": 3, "AD": 3, "BB": 3,
             "BC": 4, "BD": 4, "CC": 5, "CD": 5, "DD": 5}
    bias = {k: (0.0 if k == "AA" else eps**p) for k, p in w.items()}
    return {"omega": omega, "W": bias, "LD": ld}


# ---------------------------------------------------------------------------
# tensor integrals over the unit sphere

TENSOR_KINDS = (
    "traceT",
    "T_e1_sq",
    "T_e1_e2",
    "sff_sq",
    "sff_sq_e1sq",
    "sff_sq_e1e2",
    "AijCross",
)
_T_KINDS = TENSOR_KINDS[:3]


def _check_symmetric(A, name):
    A = np.asarray(A, dtype=float)
    if not np.allclose(A, np.swapaxes(A, 0, 1), rtol=0, atol=1e-12):
        raise NotSymmetric(f"{name} must be symmetric in its first two indices")
    return A


def _prepare(kind, d, T, II, basis):
    if kind not in TENSOR_KINDS:
        raise ValidationError(f"unknown kind {kind!r}", key="kind")
    E = np.eye(d) if basis is None else np.asarray(basis, dtype=float)
    if kind in _T_KINDS:
        if T is None:
            raise ValidationError(f"{kind} needs T", key="T")
        return _check_symmetric(T, "T"), None, E
    if II is None:
        raise ValidationError(f"{kind} needs II", key="II")
    II = _check_symmetric(II, "II")
    if II.ndim == 2:
        II = II[:, :, None]
    return None, II, E


def sphere_tensor_integral(kind, d, T=None, II=None, basis=None, s=0, l=1):
    """Closed form of a tensor integral over the unit sphere S^{d-1}.

    Parameters
    ----------
    kind : str
        One of :data:`TENSOR_KINDS`:

        ``traceT``       int T(theta, theta)
        ``T_e1_sq``      int T(theta, theta) <theta, e1>^2
        ``T_e1_e2``      int T(theta, theta) <theta, e1><theta, e2>
        ``sff_sq``       int |II(theta, theta)|^2
        ``sff_sq_e1sq``  int |II(theta, theta)|^2 <theta, e1>^2
        ``sff_sq_e1e2``  int |II(theta, theta)|^2 <theta, e1><theta, e2>
        ``AijCross``     int <II(theta, theta), II(theta, e_s)> <theta, e_l>, s != l
    d : int
    T : (d, d) symmetric array
    II : (d, d, m) array symmetric in its first two axes
    basis : (d, d) orthogonal array, optional
        Columns e_1, ..., e_d; the identity by default.
    s, l : int
        0-based indices for ``AijCross``.
    """
    T, II, E = _prepare(kind, d, T, II, basis)
    B = unit_ball_volume(d)
    e1, e2 = E[:, 0], E[:, min(1, d - 1)]
    if kind == "traceT":
        return B * np.trace(T)
    if kind == "T_e1_sq":
        return B / (d + 2) * (2 * e1 @ T @ e1 + np.trace(T))
    if kind == "T_e1_e2":
        return 2 * B / (d + 2) * (e1 @ T @ e2)
    from .manifolds import curvature_from_sff

    # rotate II into the basis so that entries (a, b) mean II(e_a, e_b)
    IIe = np.einsum("ia,jb,ijk->abk", E, E, II)
    c = curvature_from_sff(IIe)
    if kind == "sff_sq":
        return B / (d + 2) * (2 * c["A2"] + c["H2"])
    if kind == "sff_sq_e1sq":
        return B / ((d + 2) * (d + 4)) * (
            12 * c["H_dot_II"][0, 0] - 8 * c["Ric"][0, 0] + 2 * c["A2"] + c["H2"]
        )
    if kind == "sff_sq_e1e2":
        return B / ((d + 2) * (d + 4)) * (12 * c["H_dot_II"][0, 1] - 8 * c["Ric"][0, 1])
    if s == l:
        raise ValidationError("AijCross needs s != l", key="l")
    return B / (d + 2) * (3 * c["H_dot_II"][s, l] - 2 * c["Ric"][s, l])


def mc_sphere_tensor_integral(kind, d, n_samples, seed, T=None, II=None, basis=None, s=0, l=1):
    """Monte Carlo estimate and standard error of the left-hand side of
    :func:`sphere_tensor_integral`, integrated directly."""
    T, II, E = _prepare(kind, d, T, II, basis)
    area = sphere_area(d)
    e1, e2 = E[:, 0], E[:, min(1, d - 1)]

    def draw(rng, m):
        th = uniform_sphere(rng, m, d)
        p1, p2 = th @ e1, th @ e2
        if T is not None:
            q = np.einsum("ni,ij,nj->n", th, T, th)
            weight = {"traceT": 1.0, "T_e1_sq": p1**2, "T_e1_e2": p1 * p2}[kind]
            return area * q * weight
        v = np.einsum("ni,nj,ijk->nk", th, th, II)
        if kind == "AijCross":
            w = np.einsum("ni,j,ijk->nk", th, E[:, s], II)
            return area * np.einsum("nk,nk->n", v, w) * (th @ E[:, l])
        sq = np.einsum("nk,nk->n", v, v)
        weight = {"sff_sq": 1.0, "sff_sq_e1sq": p1**2, "sff_sq_e1e2": p1 * p2}[kind]
        return area * sq * weight

    return _mc_mean(draw, n_samples, seed, ("tensor", kind, d))


# ---------------------------------------------------------------------------
# local averages at interior points


def interior_moment_oracle(d, eps, field_data, rho_data, which, indices=(), curvature=None):
    """Leading expansion of a rho-weighted local average over B_eps(z).

    Parameters
    ----------
    d, eps : int, float
    field_data : tuple (f, grad, hess) at z, in an orthonormal frame
        ``None`` is accepted for items that do not involve f.
    rho_data : tuple (rho, grad, hess) at z in the same frame
    which : {"i", "ii", "iii", "iv", "v", "vi"}
        i    average of f
        ii   average of <x - z, e_j> f                        indices (j,)
        iii  average of <x - z, e_j>^2 f                      indices (j,)
        iv   average of <x - z, e_s><x - z, e_l> f, s != l    indices (s, l)
        v    average of <x - z, e_s><x - z, e_l>^2, or of
             <x - z, e_j><x - z, e_s><x - z, e_l> for three
             distinct indices                                 indices (s, l) or (j, s, l)
        vi   average of <x - z, e_s>^2 <x - z, e_l>^2         indices (s, l)
    curvature : dict, optional
        Needs ``Lambda`` and ``H_dot_II`` (d x d) for items iii and iv, as
        produced by :func:`manifold_hessian.manifolds.curvature_from_sff`.

    Indices are 0-based.  The error of items i and ii is O(eps^4); the
    others are accurate to O(eps^6).
    """
    a = eps**2 / (d + 2)
    b = eps**4 / ((d + 2) * (d + 4))
    rho, grho, hrho = rho_data
    grho = np.asarray(grho, dtype=float)
    hrho = np.asarray(hrho, dtype=float)
    lap_rho = float(np.trace(hrho))
    if field_data is not None:
        f, gf, hf = field_data
        gf = np.asarray(gf, dtype=float)
        hf = np.asarray(hf, dtype=float)
        lap_f = float(np.trace(hf))
    elif which in ("i", "ii", "iii", "iv"):
        raise ValidationError(f"item {which} needs field data", key="field_data")
    if which in ("iii", "iv") and (
        curvature is None or "Lambda" not in curvature or "H_dot_II" not in curvature
    ):
        raise MissingCurvatureData(f"item {which} needs Lambda and H.II")
    if which == "i":
        return f + 0.5 * a * (lap_f + 2.0 / rho * (gf @ grho))
    if which == "ii":
        (j,) = indices
        return a * (gf[j] + f * grho[j] / rho)
    if which == "iii":
        (j,) = indices
        hii = curvature["H_dot_II"][j, j]
        return (
            a * f
            + b * (hf[j, j] + 0.5 * lap_f)
            + b / rho * (2 * gf[j] * grho[j] + gf @ grho + f * hrho[j, j] - f * lap_rho / (d + 2))
            + b * (2 * curvature["Lambda"] - 0.5 * hii) * f
        )
    if which == "iv":
        s, l = indices
        if s == l:
            raise ValidationError("item iv needs s != l", key="indices")
        return (
            b * hf[s, l]
            + b / rho * (gf[s] * grho[l] + gf[l] * grho[s] + f * hrho[s, l])
            - 0.5 * b * curvature["H_dot_II"][s, l] * f
        )
    if which == "v":
        if len(indices) == 3:
            if len(set(indices)) != 3:
                raise ValidationError("three indices must be distinct", key="indices")
            return 0.0
        s, l = indices
        return (3 * b if s == l else b) * grho[s] / rho
    if which == "vi":
        s, l = indices
        return 3 * b if s == l else b
    raise ValidationError(f"unknown item {which!r}", key="which")


# ---------------------------------------------------------------------------
# report table


def _random_symmetric(rng, d, m=None):
    if m is None:
        A = rng.standard_normal((d, d))
        return 0.5 * (A + A.T)
    A = rng.standard_normal((d, d, m))
    return 0.5 * (A + A.transpose(1, 0, 2))


def oracle_table(d, delta=0.0, eps=0.1, n_mc=10**6, seed=0, z_sigma=4.0):
    """Every implemented integral with its closed form, quadrature and Monte
    Carlo values.

    Each row is a dict with keys name, closed_form, quadrature, mc,
    mc_stderr and pass.  A row passes when the Monte Carlo value lies
    within ``z_sigma`` standard errors of the reference (closed form if it
    exists, quadrature otherwise) and, when both exist, closed form and
    quadrature agree to 1e-8.
    """
    nan = math.nan
    rows = []

    def add(name, closed, quad, mc):
        est, se = mc
        ref = closed if math.isfinite(closed) else quad
        ok = abs(est - ref) <= z_sigma * se + 1e-12
        if math.isfinite(closed) and math.isfinite(quad):
            ok = ok and abs(closed - quad) <= 1e-8
        rows.append(
            {"name": name, "closed_form": float(closed), "quadrature": float(quad),
             "mc": float(est), "mc_stderr": float(se), "pass": bool(ok)}
        )

    add("unit_ball_volume", unit_ball_volume(d),
        truncated_C(d, 0.0, 0, 0) if d >= 2 else nan,
        mc_moment(BallMomentSpec(d, (), "Ball"), n_mc, _seed(seed, "volume")))
    for name, (domain, pattern) in NAMED_MOMENTS.items():
        if len(pattern) > d:
            continue
        spec = BallMomentSpec(d, pattern, domain)
        quad = nan
        if domain == "Ball" and d >= 2:
            quad = truncated_C(d, 0.0, 4, 0) if pattern == (4,) else truncated_C(d, 0.0, 2, 2)
        add(name, ball_moment(spec), quad, mc_moment(spec, n_mc, _seed(seed, name)))
    add("odd_S_(1,2)", 0.0, nan,
        mc_moment(BallMomentSpec(d, (1, 2)[:d], "Sphere"), n_mc, _seed(seed, "odd")))

    if d >= 2:
        g0 = _delta0_values(d)
        for key in [(0, 0), (1, 0), (2, 0), (0, 2), (3, 0), (1, 2), (4, 0), (2, 2), (0, 4), "022"]:
            cross = key == "022"
            mm, kk = (0, 0) if cross else key
            quad = truncated_C(d, delta, mm, kk, cross=cross)
            closed = g0[key] if delta == 0 else nan
            label = "C_0,2,2" if cross else f"C_{mm},{kk}"
            add(label, closed, quad,
                mc_truncated_C(d, delta, mm, kk, n_mc, _seed(seed, label), cross=cross))
        gs = greeks(d, delta, eps)
        for name in ("gamma1", "alpha1", "alpha2", "mu1", "mu2", "beta1", "beta2", "beta3", "beta4"):
            closed = _delta0_greek(name, d, eps) if delta == 0 else nan
            val = getattr(gs, name)
            rows.append({"name": name, "closed_form": closed, "quadrature": val,
                         "mc": nan, "mc_stderr": nan,
                         "pass": bool(not math.isfinite(closed) or abs(val - closed) <= 1e-8)})

    rng = rng_stream(seed, "oracle_table_tensors", d)
    T = _random_symmetric(rng, d)
    II = _random_symmetric(rng, d, 2)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    for kind in TENSOR_KINDS:
        if d < 2 and kind in ("T_e1_e2", "sff_sq_e1e2", "AijCross"):
            continue
        kw = {"T": T} if kind in _T_KINDS else {"II": II}
        add(kind, sphere_tensor_integral(kind, d, basis=Q, **kw), nan,
            mc_sphere_tensor_integral(kind, d, n_mc, _seed(seed, kind), basis=Q, **kw))
    return rows


def _seed(seed, label):
    from ._rng import derive_seed

    return derive_seed(seed, "oracle_table", *[ord(c) for c in str(label)])


def _delta0_values(d):
    """Full-ball values of the C constants."""
    B = unit_ball_volume(d)
    a = B / (d + 2)
    b = B / ((d + 2) * (d + 4))
    return {(0, 0): B, (1, 0): 0.0, (2, 0): a, (0, 2): a, (3, 0): 0.0, (1, 2): 0.0,
            (4, 0): 3 * b, (2, 2): b, (0, 4): 3 * b, "022": b}


def _delta0_greek(name, d, eps):
    a = eps**2 / (d + 2)
    b = eps**4 / ((d + 2) * (d + 4))
    return {"gamma1": 0.0, "mu1": 0.0, "mu2": 0.0, "alpha1": a, "alpha2": a,
            "beta1": 3 * b, "beta3": 3 * b, "beta2": b, "beta4": b}[name]
