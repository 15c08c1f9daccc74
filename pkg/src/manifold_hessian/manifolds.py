"""Synthetic embedded manifolds with exact geometric ground truth.

Every model knows its embedding, an orthonormal tangent frame, the second
fundamental form in that frame, its volume and its distance to the
boundary.  Scalar fields and densities defined through ambient functions
get their covariant gradient and Hessian from the submanifold identity

    Hess f (X, Y) = D^2 F (X, Y) + <grad F, II(X, Y)>,

so nothing here depends on the estimator that is being checked.

Charts
------
FlatDisk(d, p, radius)
    u in the closed ball of the given radius, x = (u, 0, ..., 0).
Sphere(d) / Hemisphere(d)
    hyperspherical angles u = (phi_1, ..., phi_d) with
    x = (sin phi_1 * S^{d-1}(phi_2, ...), cos phi_1), so u = 0 is the
    pole (0, ..., 0, 1).  The hemisphere keeps x_{d+1} >= 0.
Cylinder(radius, half_height)
    u = (theta, h), x = (R cos theta, R sin theta, h).
Torus(major, minor)
    u = (phi, psi), x = ((R + r cos phi) cos psi, (R + r cos phi) sin psi,
    r sin phi).
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import gamma

from ._rng import rng_stream
from .errors import (
    FrameNotTangent,
    NotOnManifold,
    OutOfChart,
    RejectionStall,
    UnsupportedField,
    ValidationError,
)

MEMBERSHIP_TOL = 1e-12
FRAME_TOL = 1e-8


def unit_ball_volume(d):
    """Volume of the unit ball in R^d."""
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


def _as_points(x, p):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p:
        raise ValidationError(f"expected points in R^{p}, got shape {x.shape}")
    return x


class ManifoldModel:
    """Base class; subclasses are frozen dataclasses."""

    intrinsic_dim: int
    ambient_dim: int
    has_boundary = False
    flat_chart = False

    # -- chart -----------------------------------------------------------
    def chart_box(self):
        """(lo, hi) bounds of the rectangle containing the chart domain."""
        raise NotImplementedError

    def in_chart(self, u):
        lo, hi = self.chart_box()
        u = np.asarray(u, dtype=float)
        return np.all((u >= lo) & (u <= hi), axis=-1)

    def _embed(self, u):
        raise NotImplementedError

    def embed(self, u):
        """Map chart coordinates to ambient points (vectorised over rows)."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.intrinsic_dim:
            raise OutOfChart(f"chart point must have {self.intrinsic_dim} coordinates")
        if not np.all(self.in_chart(u)):
            raise OutOfChart(f"{u} outside the chart domain of {self.name}")
        return self._embed(u)

    def chart(self, x):
        """Inverse of :meth:`embed` for points on the manifold."""
        raise NotImplementedError

    def chart_metric(self, u):
        """Pullback metric in chart coordinates, shape (..., d, d)."""
        raise NotImplementedError

    def area_element(self, u):
        """sqrt(det g) in chart coordinates."""
        g = self.chart_metric(u)
        return np.sqrt(np.linalg.det(g))

    def area_element_max(self):
        raise NotImplementedError

    # -- geometry ----------------------------------------------------------
    def contains(self, x, tol=MEMBERSHIP_TOL):
        raise NotImplementedError

    def check_point(self, z):
        z = _as_points(z, self.ambient_dim)
        if z.ndim != 1 or not self.contains(z):
            raise NotOnManifold(f"{z} is not on {self.name}")
        return z

    def tangent_frame(self, z):
        """p x d matrix with orthonormal columns spanning the tangent space."""
        return self._frame(self.check_point(z))

    def second_fundamental_form(self, z):
        """II(E_i, E_j) as ambient normal vectors, shape (d, d, p), in the
        frame returned by :meth:`tangent_frame`."""
        return self._sff(self.check_point(z))

    def boundary_distance(self, z):
        self.check_point(z)
        return math.inf

    def volume(self):
        raise NotImplementedError

    def scale(self):
        """Largest |x_1| over the manifold."""
        raise NotImplementedError

    def exp(self, z, v):
        """Exponential map at z applied to an ambient tangent vector v."""
        raise NotImplementedError(f"no closed-form exponential map for {self.name}")

    def chart_scales(self):
        """Lengths of the coordinate vectors for flat orthogonal charts."""
        raise UnsupportedField(f"{self.name} has no flat chart")

    # -- curvature scalars used by the moment oracles -----------------------
    def curvature(self, z):
        """Dictionary with II (d, d, p), mean curvature vector H, |A|^2,
        |H|^2, Ric (d, d), H.II (d, d) and Lambda, all in the model frame."""
        ii = self.second_fundamental_form(z)
        return curvature_from_sff(ii)

    # -- identification ----------------------------------------------------
    @property
    def name(self):
        return type(self).__name__

    def to_config(self):
        params = {k: v for k, v in self.__dict__.items()}
        return {"model": self.name, "params": params}


def curvature_from_sff(ii):
    """Curvature scalars derived from a second fundamental form array.

    ``ii`` has shape (d, d, m) and is symmetric in its first two axes; the
    last axis may hold ambient or normal-frame components.  Ricci curvature
    comes from the Gauss equation Ric(X, Y) = H.II(X, Y) - sum_j II(X, E_j).II(Y, E_j).
    """
    ii = np.asarray(ii, dtype=float)
    d = ii.shape[0]
    H = np.einsum("iik->k", ii)
    H_dot_II = np.einsum("k,ijk->ij", H, ii)
    A2 = float(np.einsum("ijk,ijk->", ii, ii))
    H2 = float(H @ H)
    ric = H_dot_II - np.einsum("ikm,jkm->ij", ii, ii)
    lam = (H2 - 2.0 * A2) / (8.0 * (d + 2))
    return {
        "II": ii,
        "H": H,
        "A2": A2,
        "H2": H2,
        "Ric": ric,
        "H_dot_II": H_dot_II,
        "scalar": float(np.trace(ric)),
        "Lambda": lam,
    }


# ---------------------------------------------------------------------------
# concrete models


@dataclass(frozen=True)
class FlatDisk(ManifoldModel):
    d: int = 2
    p: int = 3
    radius: float = 1.0

    has_boundary = True
    flat_chart = True

    def __post_init__(self):
        if self.d < 1 or self.p < self.d:
            raise ValidationError("FlatDisk needs d >= 1 and p >= d", key="params")
        if self.radius <= 0:
            raise ValidationError("radius must be positive", key="params")

    @property
    def intrinsic_dim(self):
        return self.d

    @property
    def ambient_dim(self):
        return self.p

    def chart_box(self):
        return -self.radius * np.ones(self.d), self.radius * np.ones(self.d)

    def in_chart(self, u):
        u = np.asarray(u, dtype=float)
        return np.linalg.norm(u, axis=-1) <= self.radius * (1 + 1e-15)

    def _embed(self, u):
        pad = np.zeros(u.shape[:-1] + (self.p - self.d,))
        return np.concatenate([u, pad], axis=-1)

    def chart(self, x):
        return np.asarray(x, dtype=float)[..., : self.d]

    def chart_metric(self, u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(np.eye(self.d), u.shape[:-1] + (self.d, self.d))

    def area_element(self, u):
        return np.ones(np.asarray(u).shape[:-1])

    def area_element_max(self):
        return 1.0

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_points(x, self.p)
        inside = np.linalg.norm(x[..., : self.d], axis=-1) <= self.radius + tol
        flat = np.all(np.abs(x[..., self.d :]) <= tol, axis=-1)
        return inside & flat

    def _frame(self, z):
        return np.eye(self.p)[:, : self.d]

    def _sff(self, z):
        return np.zeros((self.d, self.d, self.p))

    def boundary_distance(self, z):
        z = self.check_point(z)
        return max(self.radius - float(np.linalg.norm(z[: self.d])), 0.0)

    def volume(self):
        return unit_ball_volume(self.d) * self.radius**self.d

    def scale(self):
        return self.radius

    def exp(self, z, v):
        return np.asarray(z, dtype=float) + np.asarray(v, dtype=float)

    def chart_scales(self):
        return np.ones(self.d)


def _sphere_embed(u):
    """Hyperspherical angles to a point of the unit sphere S^d in R^{d+1}."""
    d = u.shape[-1]
    if d == 1:
        return np.stack([np.cos(u[..., 0]), np.sin(u[..., 0])], axis=-1)
    inner = _sphere_embed(u[..., 1:])
    s = np.sin(u[..., :1])
    return np.concatenate([s * inner, np.cos(u[..., :1])], axis=-1)


def _sphere_chart(x):
    d = x.shape[-1] - 1
    if d == 1:
        return np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)[..., None]
    a1 = np.arccos(np.clip(x[..., -1], -1.0, 1.0))
    s = np.sin(a1)[..., None]
    with np.errstate(invalid="ignore", divide="ignore"):
        inner = np.where(s > 0, x[..., :-1] / np.where(s > 0, s, 1.0), 0.0)
    # at the poles the inner angles are arbitrary; pick the inner pole
    at_pole = (s[..., 0] == 0)
    if np.any(at_pole):
        inner = np.array(inner, copy=True)
        inner[at_pole] = 0.0
        inner[at_pole, -1] = 1.0 if d > 1 else 0.0
        if d == 2:
            inner[at_pole] = np.array([1.0, 0.0])
    return np.concatenate([a1[..., None], _sphere_chart(inner)], axis=-1)


def _reflection_frame(z):
    """Orthonormal basis of z-perp from the Householder map e_last -> z."""
    p = z.shape[0]
    e = np.zeros(p)
    e[-1] = 1.0
    v = z - e
    nv = np.linalg.norm(v)
    if nv < 1e-14:
        return np.eye(p)[:, : p - 1]
    v = v / nv
    H = np.eye(p) - 2.0 * np.outer(v, v)
    return H[:, : p - 1]


@dataclass(frozen=True)
class Sphere(ManifoldModel):
    d: int = 2

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("Sphere needs d >= 1", key="params")

    @property
    def intrinsic_dim(self):
        return self.d

    @property
    def ambient_dim(self):
        return self.d + 1

    def _polar_max(self):
        return math.pi

    def chart_box(self):
        lo = np.zeros(self.d)
        hi = np.full(self.d, math.pi)
        hi[-1] = 2 * math.pi
        if self.d > 1:
            hi[0] = self._polar_max()
        return lo, hi

    def in_chart(self, u):
        lo, hi = self.chart_box()
        u = np.asarray(u, dtype=float)
        ok = np.all(u >= lo, axis=-1) & np.all(u[..., :-1] <= hi[:-1], axis=-1)
        return ok & (u[..., -1] < hi[-1])

    def _embed(self, u):
        return _sphere_embed(u)

    def chart(self, x):
        return _sphere_chart(np.asarray(x, dtype=float))

    def chart_metric(self, u):
        u = np.asarray(u, dtype=float)
        diag = np.ones(u.shape)
        s2 = np.sin(u) ** 2
        for i in range(1, self.d):
            diag[..., i] = diag[..., i - 1] * s2[..., i - 1]
        return diag[..., :, None] * np.eye(self.d)

    def area_element(self, u):
        u = np.asarray(u, dtype=float)
        out = np.ones(u.shape[:-1])
        for i in range(self.d - 1):
            out = out * np.sin(u[..., i]) ** (self.d - 1 - i)
        return np.abs(out)

    def area_element_max(self):
        return 1.0

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_points(x, self.d + 1)
        return np.abs(np.linalg.norm(x, axis=-1) - 1.0) <= tol

    def _frame(self, z):
        return _reflection_frame(z)

    def _sff(self, z):
        return -np.eye(self.d)[:, :, None] * z[None, None, :]

    def volume(self):
        return 2 * math.pi ** ((self.d + 1) / 2) / gamma((self.d + 1) / 2)

    def scale(self):
        return 1.0

    def exp(self, z, v):
        z = np.asarray(z, dtype=float)
        v = np.asarray(v, dtype=float)
        t = np.linalg.norm(v)
        if t == 0:
            return z.copy()
        return math.cos(t) * z + math.sin(t) * v / t


@dataclass(frozen=True)
class Hemisphere(Sphere):
    """Upper half x_{d+1} >= 0 of the unit sphere."""

    has_boundary = True

    def _polar_max(self):
        return math.pi / 2

    def chart_box(self):
        lo, hi = super().chart_box()
        if self.d == 1:
            hi[0] = math.pi
        return lo, hi

    def in_chart(self, u):
        u = np.asarray(u, dtype=float)
        if self.d == 1:
            return (u[..., 0] >= 0) & (u[..., 0] <= math.pi)
        return super().in_chart(u)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_points(x, self.d + 1)
        return super().contains(x, tol) & (x[..., -1] >= -tol)

    def boundary_distance(self, z):
        z = self.check_point(z)
        return max(math.asin(min(max(z[-1], -1.0), 1.0)), 0.0)

    def volume(self):
        return 0.5 * super().volume()


@dataclass(frozen=True)
class Cylinder(ManifoldModel):
    radius: float = 1.0
    half_height: float = 1.0

    has_boundary = True
    flat_chart = True

    def __post_init__(self):
        if self.radius <= 0 or self.half_height <= 0:
            raise ValidationError("radius and half_height must be positive", key="params")

    intrinsic_dim = 2
    ambient_dim = 3

    def chart_box(self):
        return np.array([0.0, -self.half_height]), np.array([2 * math.pi, self.half_height])

    def in_chart(self, u):
        u = np.asarray(u, dtype=float)
        return (
            (u[..., 0] >= 0)
            & (u[..., 0] < 2 * math.pi)
            & (np.abs(u[..., 1]) <= self.half_height)
        )

    def _embed(self, u):
        R = self.radius
        return np.stack(
            [R * np.cos(u[..., 0]), R * np.sin(u[..., 0]), u[..., 1]], axis=-1
        )

    def chart(self, x):
        x = np.asarray(x, dtype=float)
        theta = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * math.pi)
        return np.stack([theta, x[..., 2]], axis=-1)

    def chart_metric(self, u):
        u = np.asarray(u, dtype=float)
        g = np.diag([self.radius**2, 1.0])
        return np.broadcast_to(g, u.shape[:-1] + (2, 2))

    def area_element(self, u):
        return np.full(np.asarray(u).shape[:-1], self.radius)

    def area_element_max(self):
        return self.radius

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_points(x, 3)
        r = np.hypot(x[..., 0], x[..., 1])
        return (np.abs(r - self.radius) <= tol * max(1.0, self.radius)) & (
            np.abs(x[..., 2]) <= self.half_height + tol
        )

    def _frame(self, z):
        theta = math.atan2(z[1], z[0])
        return np.array(
            [[-math.sin(theta), 0.0], [math.cos(theta), 0.0], [0.0, 1.0]]
        )

    def _sff(self, z):
        n = np.array([z[0], z[1], 0.0]) / self.radius
        ii = np.zeros((2, 2, 3))
        ii[0, 0] = -n / self.radius
        return ii

    def boundary_distance(self, z):
        z = self.check_point(z)
        return max(self.half_height - abs(float(z[2])), 0.0)

    def volume(self):
        return 2 * math.pi * self.radius * 2 * self.half_height

    def scale(self):
        return self.radius

    def exp(self, z, v):
        z = np.asarray(z, dtype=float)
        E = self._frame(z)
        a, b = E.T @ np.asarray(v, dtype=float)
        theta, h = self.chart(z)
        theta = theta + a / self.radius
        return np.array(
            [self.radius * math.cos(theta), self.radius * math.sin(theta), h + b]
        )

    def chart_scales(self):
        return np.array([self.radius, 1.0])


@dataclass(frozen=True)
class Torus(ManifoldModel):
    major: float = 2.0
    minor: float = 0.5

    def __post_init__(self):
        if not 0 < self.minor < self.major:
            raise ValidationError("Torus needs 0 < minor < major", key="params")

    intrinsic_dim = 2
    ambient_dim = 3

    def chart_box(self):
        return np.zeros(2), np.full(2, 2 * math.pi)

    def in_chart(self, u):
        u = np.asarray(u, dtype=float)
        return np.all((u >= 0) & (u < 2 * math.pi), axis=-1)

    def _embed(self, u):
        R, r = self.major, self.minor
        phi, psi = u[..., 0], u[..., 1]
        rho = R + r * np.cos(phi)
        return np.stack([rho * np.cos(psi), rho * np.sin(psi), r * np.sin(phi)], axis=-1)

    def chart(self, x):
        x = np.asarray(x, dtype=float)
        psi = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * math.pi)
        rho = np.hypot(x[..., 0], x[..., 1])
        phi = np.mod(np.arctan2(x[..., 2], rho - self.major), 2 * math.pi)
        return np.stack([phi, psi], axis=-1)

    def chart_metric(self, u):
        u = np.asarray(u, dtype=float)
        rho = self.major + self.minor * np.cos(u[..., 0])
        g = np.zeros(u.shape[:-1] + (2, 2))
        g[..., 0, 0] = self.minor**2
        g[..., 1, 1] = rho**2
        return g

    def area_element(self, u):
        u = np.asarray(u, dtype=float)
        return self.minor * (self.major + self.minor * np.cos(u[..., 0]))

    def area_element_max(self):
        return self.minor * (self.major + self.minor)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_points(x, 3)
        rho = np.hypot(x[..., 0], x[..., 1])
        dist = np.hypot(rho - self.major, x[..., 2])
        return np.abs(dist - self.minor) <= tol * max(1.0, self.major)

    def _angles(self, z):
        phi, psi = self.chart(z)
        return phi, psi

    def _frame(self, z):
        phi, psi = self._angles(z)
        e_phi = np.array(
            [-math.sin(phi) * math.cos(psi), -math.sin(phi) * math.sin(psi), math.cos(phi)]
        )
        e_psi = np.array([-math.sin(psi), math.cos(psi), 0.0])
        return np.column_stack([e_phi, e_psi])

    def _sff(self, z):
        phi, psi = self._angles(z)
        n = np.array(
            [math.cos(phi) * math.cos(psi), math.cos(phi) * math.sin(psi), math.sin(phi)]
        )
        ii = np.zeros((2, 2, 3))
        ii[0, 0] = -n / self.minor
        ii[1, 1] = -math.cos(phi) / (self.major + self.minor * math.cos(phi)) * n
        return ii

    def volume(self):
        return 4 * math.pi**2 * self.major * self.minor

    def exp(self, z, v):
        """Geodesic from z with initial velocity v, integrated in the chart.

        With rho = R + r cos(phi) the geodesic equations are
        phi'' = -(rho sin(phi) / r) psi'^2 and psi'' = (2 r sin(phi) / rho) phi' psi'.
        """
        z = np.asarray(z, dtype=float)
        a, b = self._frame(z).T @ np.asarray(v, dtype=float)
        phi0, psi0 = self._angles(z)
        R, r = self.major, self.minor

        def rhs(_, y):
            phi, psi, dphi, dpsi = y
            rho = R + r * math.cos(phi)
            return [dphi, dpsi, -rho * math.sin(phi) / r * dpsi**2,
                    2 * r * math.sin(phi) / rho * dphi * dpsi]

        y0 = [phi0, psi0, a / r, b / (R + r * math.cos(phi0))]
        sol = solve_ivp(rhs, (0.0, 1.0), y0, method="DOP853", rtol=1e-13, atol=1e-15)
        phi, psi = sol.y[0, -1], sol.y[1, -1]
        return self._embed(np.array([phi, psi]))

    def scale(self):
        return self.major + self.minor


MODELS = {
    "FlatDisk": FlatDisk,
    "Sphere": Sphere,
    "Hemisphere": Hemisphere,
    "Cylinder": Cylinder,
    "Torus": Torus,
}


def make_model(name, params=None):
    """Build a model from its name and a parameter dictionary."""
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValidationError(f"unknown model {name!r}", key="model") from None
    try:
        return cls(**(params or {}))
    except TypeError as exc:
        raise ValidationError(str(exc), key="params") from None


def max_epsilon(model):
    """Largest neighbourhood radius that keeps balls inside one injective
    chart patch.  Documentation only; never enforced."""
    if isinstance(model, FlatDisk):
        return model.radius
    if isinstance(model, Sphere):
        return 1.0
    if isinstance(model, Cylinder):
        return model.radius
    if isinstance(model, Torus):
        return model.minor
    return math.inf


# ---------------------------------------------------------------------------
# scalar fields


class ScalarField:
    """A C^4 function on a model with closed-form derivatives."""

    def values(self, model, x):
        raise NotImplementedError

    def derivatives(self, model, z):
        """(f, grad, hess) at z in ``model.tangent_frame(z)``."""
        raise NotImplementedError


class AmbientField(ScalarField):
    """Restriction of a smooth function F on R^p."""

    def ambient_value(self, x):
        raise NotImplementedError

    def ambient_grad(self, z):
        raise NotImplementedError

    def ambient_hess(self, z):
        raise NotImplementedError

    def values(self, model, x):
        return self.ambient_value(_as_points(x, model.ambient_dim))

    def derivatives(self, model, z):
        z = model.check_point(z)
        E = model._frame(z)
        ii = model._sff(z)
        g_amb = self.ambient_grad(z)
        grad = E.T @ g_amb
        hess = E.T @ self.ambient_hess(z) @ E + np.einsum("ijk,k->ij", ii, g_amb)
        hess = 0.5 * (hess + hess.T)
        return float(self.ambient_value(z)), grad, hess


@dataclass(frozen=True)
class AmbientLinear(AmbientField):
    """f(x) = <c, x>."""

    c: tuple

    def ambient_value(self, x):
        return np.asarray(x, dtype=float) @ np.asarray(self.c, dtype=float)

    def ambient_grad(self, z):
        return np.asarray(self.c, dtype=float)

    def ambient_hess(self, z):
        p = len(self.c)
        return np.zeros((p, p))


@dataclass(frozen=True)
class TrigField(AmbientField):
    """f(x) = sin(<w, x> + phase)."""

    frequencies: tuple
    phase: float = 0.0

    def _arg(self, x):
        return np.asarray(x, dtype=float) @ np.asarray(self.frequencies, dtype=float) + self.phase

    def ambient_value(self, x):
        return np.sin(self._arg(x))

    def ambient_grad(self, z):
        return math.cos(float(self._arg(z))) * np.asarray(self.frequencies, dtype=float)

    def ambient_hess(self, z):
        w = np.asarray(self.frequencies, dtype=float)
        return -math.sin(float(self._arg(z))) * np.outer(w, w)


@dataclass(frozen=True)
class ChartPolynomial(ScalarField):
    """Polynomial in the chart coordinates of a flat-chart model.

    ``terms`` maps exponent tuples to coefficients, e.g.
    ``{(2, 0): 1.0, (1, 1): 0.5}`` for u1^2 + 0.5 u1 u2.
    """

    terms: dict = field(hash=False)

    def _check(self, model):
        if not model.flat_chart:
            raise UnsupportedField(f"ChartPolynomial needs a flat chart; {model.name} has none")
        for exps in self.terms:
            if len(exps) != model.intrinsic_dim:
                raise UnsupportedField("exponent tuple length must equal intrinsic_dim")

    def _eval(self, u, deriv=()):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1])
        for exps, coef in self.terms.items():
            exps = list(exps)
            c = float(coef)
            for k in deriv:
                c *= exps[k]
                exps[k] -= 1
            if c == 0 or min(exps) < 0:
                continue
            term = np.full(u.shape[:-1], c)
            for k, e in enumerate(exps):
                if e:
                    term = term * u[..., k] ** e
            out = out + term
        return out

    def values(self, model, x):
        self._check(model)
        return self._eval(model.chart(_as_points(x, model.ambient_dim)))

    def chart_derivatives(self, u):
        d = len(u)
        grad = np.array([self._eval(u, (i,)) for i in range(d)], dtype=float)
        hess = np.array(
            [[self._eval(u, (i, j)) for j in range(d)] for i in range(d)], dtype=float
        )
        return float(self._eval(u)), grad, hess

    def derivatives(self, model, z):
        self._check(model)
        z = model.check_point(z)
        f, grad, hess = self.chart_derivatives(model.chart(z))
        s = model.chart_scales()
        return f, grad / s, hess / np.outer(s, s)


def true_derivatives(model, field_, z, frame=None):
    """Exact (f, grad, hess) of a field at z expressed in ``frame``.

    ``frame`` is any p x d matrix with orthonormal columns tangent at z;
    the model's own frame is used when omitted.  The Hessian is the
    covariant one, which coincides with second derivatives in normal
    coordinates centred at z.
    """
    z = model.check_point(z)
    E = model._frame(z)
    f, grad, hess = field_.derivatives(model, z)
    if frame is None:
        return f, grad, hess
    frame = np.asarray(frame, dtype=float)
    if frame.shape != E.shape:
        raise FrameNotTangent(f"frame must have shape {E.shape}")
    off = frame - E @ (E.T @ frame)
    if np.linalg.norm(off) >= FRAME_TOL:
        raise FrameNotTangent("frame columns are not tangent at z")
    if np.linalg.norm(frame.T @ frame - np.eye(frame.shape[1])) >= FRAME_TOL:
        raise FrameNotTangent("frame columns are not orthonormal")
    R = E.T @ frame
    return f, R.T @ grad, R.T @ hess @ R


def field_catalog(model):
    """The fixed test fields for a model, keyed by name."""
    p = model.ambient_dim
    d = model.intrinsic_dim
    c = np.array([0.3, -0.5, 0.8, 0.2, -0.4, 0.6, 0.1][:p] + [0.25] * max(0, p - 7))
    c = tuple(c / np.linalg.norm(c))
    w = tuple([1.3, -0.7, 0.9, 0.5, -1.1, 0.8][:p] + [0.6] * max(0, p - 6))
    height = tuple(np.eye(p)[-1])
    cat = {"linear": AmbientLinear(c), "trig": TrigField(w, 0.3)}
    if isinstance(model, FlatDisk):
        terms = {}
        e = [0] * d
        e[0] = 2
        terms[tuple(e)] = 1.0
        e = [0] * d
        e[0] = 1
        terms[tuple(e)] = 0.25
        if d > 1:
            e = [0] * d
            e[-1] = 2
            terms[tuple(e)] = -0.5
            e = [0] * d
            e[0] = e[-1] = 1
            terms[tuple(e)] = 1.0
        cat["quadratic"] = ChartPolynomial(terms)
    elif isinstance(model, Cylinder):
        cat["quadratic"] = ChartPolynomial({(0, 2): 1.0, (0, 1): 0.5})
    else:
        cat["height"] = AmbientLinear(height)
    return cat


# ---------------------------------------------------------------------------
# densities


class DensityModel:
    """Probability density with respect to the Riemannian volume."""

    def unnormalized(self, model, x):
        raise NotImplementedError

    def normalization(self, model):
        raise NotImplementedError

    def value(self, model, x):
        return self.normalization(model) * self.unnormalized(model, x)

    def upper_bound(self, model):
        """Upper bound of the unnormalised density."""
        raise NotImplementedError

    def infimum(self, model):
        """Lower bound of the normalised density."""
        raise NotImplementedError

    def derivatives(self, model, z):
        """(rho, grad rho, Hess rho) at z in the model frame."""
        raise NotImplementedError

    def to_config(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Uniform(DensityModel):
    def unnormalized(self, model, x):
        return np.ones(np.asarray(x).shape[:-1])

    def normalization(self, model):
        return 1.0 / model.volume()

    def upper_bound(self, model):
        return 1.0

    def infimum(self, model):
        return 1.0 / model.volume()

    def derivatives(self, model, z):
        d = model.intrinsic_dim
        return 1.0 / model.volume(), np.zeros(d), np.zeros((d, d))

    def to_config(self):
        return {"density": "Uniform"}


@dataclass(frozen=True)
class SmoothBump(DensityModel):
    """rho proportional to 1 + a sin(k pi x_1 / (2 s)), s = max |x_1|.

    The bump is odd in x_1 and every model is symmetric under x_1 -> -x_1,
    so the normalising constant is exactly 1 / Vol(M).
    """

    amplitude: float = 0.5
    mode: int = 1

    def __post_init__(self):
        if not abs(self.amplitude) < 1:
            raise ValidationError("SmoothBump amplitude must satisfy |a| < 1", key="density")

    def _bump(self, model):
        w = np.zeros(model.ambient_dim)
        w[0] = self.mode * math.pi / (2 * model.scale())
        return TrigField(tuple(w))

    def unnormalized(self, model, x):
        return 1.0 + self.amplitude * self._bump(model).ambient_value(x)

    def normalization(self, model):
        return 1.0 / model.volume()

    def upper_bound(self, model):
        return 1.0 + abs(self.amplitude)

    def infimum(self, model):
        return (1.0 - abs(self.amplitude)) / model.volume()

    def derivatives(self, model, z):
        b, gb, hb = self._bump(model).derivatives(model, z)
        k = self.normalization(model)
        return k * (1.0 + self.amplitude * b), k * self.amplitude * gb, k * self.amplitude * hb

    def to_config(self):
        return {"density": "SmoothBump", "amplitude": self.amplitude, "mode": self.mode}


def make_density(spec):
    """Density from a name or a dictionary like {"density": "SmoothBump", ...}."""
    if spec is None:
        return Uniform()
    if isinstance(spec, DensityModel):
        return spec
    if isinstance(spec, str):
        spec = {"density": spec}
    spec = dict(spec)
    name = spec.pop("density", spec.pop("name", None))
    if name == "Uniform" and not spec:
        return Uniform()
    if name == "SmoothBump":
        try:
            return SmoothBump(**spec)
        except TypeError as exc:
            raise ValidationError(str(exc), key="density") from None
    raise ValidationError(f"unknown density {name!r}", key="density")


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True, eq=False)
class PointCloud:
    """n i.i.d. points on a model, with the metadata that regenerates them."""

    points: np.ndarray
    model: ManifoldModel
    density: DensityModel
    seed: int

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def model_id(self):
        return self.model.to_config()

    @property
    def density_id(self):
        return self.density.to_config()

    def metadata(self):
        return {
            **self.model_id,
            "density": self.density_id,
            "n": self.n,
            "seed": self.seed,
        }


def _interior_margin(model, u):
    """Positive in the chart interior, zero on the boundary."""
    if isinstance(model, FlatDisk):
        return model.radius - np.linalg.norm(u, axis=-1)
    if isinstance(model, Hemisphere):
        if model.d == 1:
            return np.minimum(u[..., 0], math.pi - u[..., 0])
        return math.pi / 2 - u[..., 0]
    if isinstance(model, Cylinder):
        return model.half_height - np.abs(u[..., 1])
    return np.ones(u.shape[:-1])


PROPOSALS_PER_CHUNK = 1 << 16
_STALL_MIN_PROPOSALS = 1 << 20


def iter_sample_chunks(model, density, n, seed, purpose="sample"):
    """Yield accepted points in chunks until n have been produced.

    Proposals are uniform on the chart rectangle and accepted with
    probability area_element(u) * rho(u) / bound, where the bound is the
    product of the analytic maxima of both factors.  Chunk i uses its own
    counter-based stream, so the output is a deterministic function of
    (model, density, n, seed) and the first m points do not depend on n.
    """
    if n < 1:
        raise ValidationError("n must be at least 1", key="n")
    lo, hi = model.chart_box()
    bound = model.area_element_max() * density.upper_bound(model)
    produced = 0
    proposed = 0
    chunk = 0
    while produced < n:
        rng = rng_stream(seed, purpose, chunk)
        u = lo + (hi - lo) * rng.random((PROPOSALS_PER_CHUNK, model.intrinsic_dim))
        y = bound * rng.random(PROPOSALS_PER_CHUNK)
        inside = model.in_chart(u)
        if model.has_boundary:
            # the boundary has measure zero; drop it so the samples stay interior
            inside &= _interior_margin(model, u) > 0
        u = u[inside]
        y = y[inside]
        x = model._embed(u)
        weight = model.area_element(u) * density.unnormalized(model, x)
        x = x[y < weight]
        proposed += PROPOSALS_PER_CHUNK
        chunk += 1
        take = min(len(x), n - produced)
        produced += take
        if take:
            yield x[:take]
        if proposed >= _STALL_MIN_PROPOSALS and produced / proposed < 1e-4:
            raise RejectionStall(
                f"acceptance rate {produced / proposed:.2e} below 1e-4 after {proposed} proposals"
            )


def sample(model, density, n, seed):
    """Draw a :class:`PointCloud` of n i.i.d. points from rho dvol."""
    density = make_density(density)
    pts = np.concatenate(list(iter_sample_chunks(model, density, n, seed)), axis=0)
    pts.flags.writeable = False
    return PointCloud(pts, model, density, int(seed))
