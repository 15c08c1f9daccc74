import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from manifold_hessian.errors import (
    FrameNotTangent,
    NotOnManifold,
    OutOfChart,
    RejectionStall,
    UnsupportedField,
    ValidationError,
)
from manifold_hessian.manifolds import (
    AmbientLinear,
    ChartPolynomial,
    Cylinder,
    FlatDisk,
    Hemisphere,
    SmoothBump,
    Sphere,
    Torus,
    TrigField,
    Uniform,
    curvature_from_sff,
    field_catalog,
    iter_sample_chunks,
    make_density,
    make_model,
    sample,
    true_derivatives,
)

MODELS = [
    FlatDisk(2, 3),
    FlatDisk(3, 3, radius=0.7),
    Sphere(1),
    Sphere(2),
    Sphere(3),
    Hemisphere(2),
    Cylinder(),
    Cylinder(radius=0.8, half_height=1.5),
    Torus(),
]
MODEL_IDS = [f"{m.name}-{i}" for i, m in enumerate(MODELS)]


def random_chart_points(model, n, rng):
    lo, hi = model.chart_box()
    out = []
    while len(out) < n:
        u = lo + (hi - lo) * rng.random(model.intrinsic_dim)
        # keep away from the chart edges where angles wrap
        if model.in_chart(u) and np.all(u > lo + 1e-3) and np.all(u < hi - 1e-3):
            out.append(u)
    return np.array(out)


def projector(E):
    return E @ E.T


# ---------------------------------------------------------------------------
# embed


def test_sphere_pole():
    assert Sphere(2).embed([0.0, 0.0]) == pytest.approx([0, 0, 1])


def test_flat_embed_pads_zeros():
    assert FlatDisk(2, 3).embed([0.3, 0.4]) == pytest.approx([0.3, 0.4, 0.0])


def test_cylinder_embed():
    x = Cylinder().embed([math.pi / 2, 0.5])
    assert x == pytest.approx([0, 1, 0.5], abs=1e-15)


@pytest.mark.parametrize("model, u", [
    (FlatDisk(2, 3), [0.8, 0.8]),
    (Sphere(2), [-0.1, 0.0]),
    (Hemisphere(2), [1.7, 0.0]),
    (Cylinder(), [0.0, 1.5]),
    (Torus(), [7.0, 0.0]),
])
def test_out_of_chart(model, u):
    with pytest.raises(OutOfChart):
        model.embed(u)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_sphere_embedding_has_unit_norm(d):
    rng = np.random.default_rng(d)
    u = random_chart_points(Sphere(d), 200, rng)
    assert np.abs(np.linalg.norm(Sphere(d).embed(u), axis=1) - 1).max() < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, math.pi - 0.01), st.floats(0.01, math.pi - 0.01), st.floats(0.0, 6.28))
def test_sphere_chart_inverts_embed(a, b, c):
    S = Sphere(3)
    u = np.array([a, b, c])
    assert S.chart(S.embed(u)) == pytest.approx(u, abs=1e-9)


@pytest.mark.parametrize("model", MODELS, ids=MODEL_IDS)
def test_metric_matches_jacobian(model):
    rng = np.random.default_rng(11)
    h = 1e-6
    for u in random_chart_points(model, 100, rng):
        J = np.column_stack([
            (model._embed(u + h * e) - model._embed(u - h * e)) / (2 * h)
            for e in np.eye(model.intrinsic_dim)
        ])
        assert np.abs(J.T @ J - model.chart_metric(u)).max() < 1e-6


@pytest.mark.parametrize("model", MODELS, ids=MODEL_IDS)
def test_area_element_bound(model):
    rng = np.random.default_rng(5)
    u = random_chart_points(model, 500, rng)
    assert model.area_element(u).max() <= model.area_element_max() * (1 + 1e-12)


# ---------------------------------------------------------------------------
# frames and curvature


@pytest.mark.parametrize("model", MODELS, ids=MODEL_IDS)
def test_frame_is_orthonormal_and_tangent(model):
    rng = np.random.default_rng(2)
    for u in random_chart_points(model, 20, rng):
        z = model.embed(u)
        E = model.tangent_frame(z)
        d = model.intrinsic_dim
        assert np.abs(E.T @ E - np.eye(d)).max() < 1e-12
        # the chart derivatives lie in the span of E
        h = 1e-6
        for e in np.eye(d):
            t = (model._embed(u + h * e) - model._embed(u - h * e)) / (2 * h)
            assert np.linalg.norm(t - E @ (E.T @ t)) < 1e-8


def test_sphere_pole_frame():
    E = Sphere(2).tangent_frame([0, 0, 1.0])
    assert projector(E) == pytest.approx(np.diag([1.0, 1.0, 0.0]), abs=1e-15)


def test_flat_frame():
    E = FlatDisk(2, 3).tangent_frame([0.1, -0.2, 0.0])
    assert projector(E) == pytest.approx(np.diag([1.0, 1.0, 0.0]))


def test_cylinder_frame():
    E = Cylinder().tangent_frame([1.0, 0.0, 0.3])
    assert projector(E) == pytest.approx(np.diag([0.0, 1.0, 1.0]), abs=1e-15)


def test_frame_rejects_off_manifold_points():
    with pytest.raises(NotOnManifold):
        Sphere(2).tangent_frame([0, 0, 1.1])
    with pytest.raises(NotOnManifold):
        FlatDisk(2, 3).tangent_frame([0.1, 0.1, 1e-6])


@pytest.mark.parametrize("model", [Sphere(2), Cylinder(), Torus()], ids=["sphere", "cylinder", "torus"])
def test_sff_matches_second_derivative_of_geodesics(model):
    rng = np.random.default_rng(9)
    u = random_chart_points(model, 1, rng)[0]
    z = model.embed(u)
    E = model.tangent_frame(z)
    ii = model.second_fundamental_form(z)
    h = 1e-3
    for _ in range(3):
        w = rng.standard_normal(model.intrinsic_dim)
        w /= np.linalg.norm(w)
        acc = (model.exp(z, h * E @ w) - 2 * z + model.exp(z, -h * E @ w)) / h**2
        assert acc == pytest.approx(np.einsum("i,j,ijk->k", w, w, ii), abs=1e-5)


def test_sphere_curvature_scalars():
    c = Sphere(3).curvature(np.array([0, 0, 0, 1.0]))
    assert c["H2"] == pytest.approx(9.0)
    assert c["A2"] == pytest.approx(3.0)
    assert c["Ric"] == pytest.approx(2 * np.eye(3))
    assert c["Lambda"] == pytest.approx((9 - 6) / (8 * 5))


def test_cylinder_is_intrinsically_flat():
    c = Cylinder(radius=0.5).curvature(np.array([0.5, 0.0, 0.0]))
    assert c["Ric"] == pytest.approx(np.zeros((2, 2)))
    assert c["A2"] == pytest.approx(4.0)


def test_torus_gauss_curvature():
    T = Torus(2.0, 0.5)
    phi = 0.4
    c = T.curvature(T.embed([phi, 1.0]))
    K = math.cos(phi) / (T.minor * (T.major + T.minor * math.cos(phi)))
    assert c["scalar"] == pytest.approx(2 * K)


def test_curvature_from_sff_codimension_two():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3, 2))
    A = A + A.transpose(1, 0, 2)
    c = curvature_from_sff(A)
    # Gauss equation traced: scalar = |H|^2 - |A|^2
    assert c["scalar"] == pytest.approx(c["H2"] - c["A2"])


# ---------------------------------------------------------------------------
# fields


def test_sphere_linear_field_at_its_own_direction():
    z = np.array([0.6, 0.0, 0.8])
    f, g, H = true_derivatives(Sphere(2), AmbientLinear(tuple(z)), z)
    assert f == pytest.approx(1.0)
    assert g == pytest.approx([0, 0], abs=1e-15)
    assert H == pytest.approx(-np.eye(2))


def test_sphere_linear_field_general():
    S = Sphere(2)
    z = S.embed([0.9, 2.0])
    c = np.array([0.3, -1.2, 0.5])
    f, g, H = true_derivatives(S, AmbientLinear(tuple(c)), z)
    E = S.tangent_frame(z)
    assert g == pytest.approx(E.T @ (c - (c @ z) * z))
    assert H == pytest.approx(-(c @ z) * np.eye(2))


def test_flat_polynomial_partials():
    M = FlatDisk(2, 3)
    z = np.array([0.3, -0.2, 0.0])
    f, g, H = true_derivatives(M, ChartPolynomial({(2, 0): 1.0}), z)
    assert f == pytest.approx(0.09)
    assert g == pytest.approx([0.6, 0.0])
    assert H == pytest.approx(np.diag([2.0, 0.0]))


def test_cylinder_polynomial_uses_arclength():
    M = Cylinder(radius=2.0)
    z = M.embed([0.5, 0.3])
    f, g, H = true_derivatives(M, ChartPolynomial({(2, 0): 1.0}), z)
    # theta = s / R, so d^2/ds^2 theta^2 = 2 / R^2
    assert H == pytest.approx(np.diag([0.5, 0.0]))
    assert g == pytest.approx([2 * 0.5 / 2.0, 0.0])


@pytest.mark.parametrize("model, fld", [
    (Sphere(2), AmbientLinear((0.0, 0.0, 0.0))),
    (FlatDisk(2, 2), ChartPolynomial({(0, 0): 3.0})),
    (Torus(), TrigField((0.0, 0.0, 0.0), phase=1.0)),
])
def test_constant_field(model, fld):
    rng = np.random.default_rng(3)
    z = model.embed(random_chart_points(model, 1, rng)[0])
    f, g, H = true_derivatives(model, fld, z)
    assert g == pytest.approx(np.zeros(model.intrinsic_dim), abs=1e-15)
    assert H == pytest.approx(np.zeros((model.intrinsic_dim,) * 2), abs=1e-15)


def test_chart_polynomial_needs_flat_chart():
    with pytest.raises(UnsupportedField):
        true_derivatives(Sphere(2), ChartPolynomial({(1, 0): 1.0}), np.array([0, 0, 1.0]))


def test_rotated_frame():
    S = Sphere(2)
    z = S.embed([1.0, 1.0])
    E = S.tangent_frame(z)
    t = 0.7
    R = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    fld = field_catalog(S)["trig"]
    _, g, H = true_derivatives(S, fld, z)
    _, g2, H2 = true_derivatives(S, fld, z, frame=E @ R)
    assert g2 == pytest.approx(R.T @ g)
    assert H2 == pytest.approx(R.T @ H @ R)


def test_frame_not_tangent():
    z = np.array([0, 0, 1.0])
    bad = np.array([[1.0, 0], [0, 0.6], [0, 0.8]])
    with pytest.raises(FrameNotTangent):
        true_derivatives(Sphere(2), AmbientLinear((1.0, 0, 0)), z, frame=bad)


FD_MODELS = [FlatDisk(2, 3), Sphere(2), Sphere(3), Hemisphere(2), Cylinder(0.8, 1.0), Torus()]


@pytest.mark.parametrize("model", FD_MODELS, ids=[m.name + str(i) for i, m in enumerate(FD_MODELS)])
def test_hessian_matches_finite_differences_along_geodesics(model):
    rng = np.random.default_rng(21)
    u = random_chart_points(model, 1, rng)[0]
    if isinstance(model, FlatDisk):
        u = 0.3 * u
    if isinstance(model, Cylinder):
        u[1] *= 0.5
    z = model.embed(u)
    E = model.tangent_frame(z)
    h = 1e-4
    for name, fld in field_catalog(model).items():
        f, _, H = true_derivatives(model, fld, z)
        for _ in range(20):
            w = rng.standard_normal(model.intrinsic_dim)
            w /= np.linalg.norm(w)
            v = E @ w
            fp = fld.values(model, model.exp(z, h * v)[None, :])[0]
            fm = fld.values(model, model.exp(z, -h * v)[None, :])[0]
            fd = (fp - 2 * f + fm) / h**2
            assert fd == pytest.approx(w @ H @ w, rel=1e-5, abs=1e-6), name


@pytest.mark.parametrize("model", MODELS, ids=MODEL_IDS)
def test_catalog_has_three_fields(model):
    assert len(field_catalog(model)) == 3


# ---------------------------------------------------------------------------
# boundary distance


def test_boundary_distances():
    assert Hemisphere(2).boundary_distance([0, 0, 1.0]) == pytest.approx(math.pi / 2)
    assert Sphere(2).boundary_distance([0, 0, 1.0]) == math.inf
    assert Torus().boundary_distance(Torus().embed([0.0, 0.0])) == math.inf
    assert FlatDisk(2, 3).boundary_distance([0.7, 0.0, 0.0]) == pytest.approx(0.3)
    assert Cylinder(half_height=1.0).boundary_distance([1.0, 0.0, 0.25]) == pytest.approx(0.75)


def test_boundary_distance_needs_manifold_point():
    with pytest.raises(NotOnManifold):
        Hemisphere(2).boundary_distance([0, 0, -1.0])


# ---------------------------------------------------------------------------
# densities


@pytest.mark.parametrize("model", MODELS, ids=MODEL_IDS)
@pytest.mark.parametrize("density", [Uniform(), SmoothBump(0.5), SmoothBump(-0.8, mode=3)])
def test_density_integrates_to_one(model, density):
    lo, hi = model.chart_box()
    d = model.intrinsic_dim
    x, w = np.polynomial.legendre.leggauss(160 if d < 3 else 48)
    grids = [0.5 * (b - a) * x + 0.5 * (b + a) for a, b in zip(lo, hi)]
    weights = [0.5 * (b - a) * w for a, b in zip(lo, hi)]
    U = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, d)
    W = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    inside = model.in_chart(U)
    vals = model.area_element(U[inside]) * density.value(model, model._embed(U[inside]))
    total = float(W[inside] @ vals)
    # the flat disk has a curved domain edge inside the chart box
    tol = 5e-3 if isinstance(model, FlatDisk) else 1e-10
    assert total == pytest.approx(1.0, rel=tol)


@pytest.mark.parametrize("model", MODELS, ids=MODEL_IDS)
def test_density_above_infimum(model):
    rng = np.random.default_rng(4)
    dens = SmoothBump(0.7, mode=2)
    u = random_chart_points(model, 10_000, rng)
    assert dens.value(model, model._embed(u)).min() >= dens.infimum(model) * (1 - 1e-12)


def test_bump_amplitude_must_be_below_one():
    with pytest.raises(ValidationError):
        SmoothBump(1.0)


def test_bump_derivatives_match_field():
    S = Sphere(2)
    z = S.embed([0.8, 0.3])
    dens = SmoothBump(0.4, mode=2)
    rho, g, H = dens.derivatives(S, z)
    assert rho == pytest.approx(dens.value(S, z[None, :])[0])
    h = 1e-5
    E = S.tangent_frame(z)
    for i in range(2):
        fp = dens.value(S, S.exp(z, h * E[:, i])[None, :])[0]
        fm = dens.value(S, S.exp(z, -h * E[:, i])[None, :])[0]
        assert (fp - fm) / (2 * h) == pytest.approx(g[i], rel=1e-6)


def test_make_density():
    assert make_density(None) == Uniform()
    assert make_density({"density": "SmoothBump", "amplitude": 0.2}) == SmoothBump(0.2)
    with pytest.raises(ValidationError):
        make_density("Gaussian")


def test_make_model_rejects_bad_params():
    with pytest.raises(ValidationError):
        make_model("Torus", {"major": 1.0, "minor": 2.0})
    with pytest.raises(ValidationError):
        make_model("Sphere", {"radius": 2.0})
    with pytest.raises(ValidationError):
        make_model("Klein", {})


# ---------------------------------------------------------------------------
# sampling


def test_sphere_sample_mean_is_small():
    cloud = sample(Sphere(2), Uniform(), 10_000, 0)
    assert np.linalg.norm(cloud.points.mean(axis=0)) < 0.05


def test_sample_is_deterministic():
    a = sample(Torus(), SmoothBump(0.5), 1, 42).points
    b = sample(Torus(), SmoothBump(0.5), 1, 42).points
    assert np.array_equal(a, b)


def test_sample_prefix_does_not_depend_on_n():
    a = sample(Sphere(2), Uniform(), 100, 7).points
    b = sample(Sphere(2), Uniform(), 100_000, 7).points
    assert np.array_equal(a, b[:100])


def test_hemisphere_samples_upper_half():
    cloud = sample(Hemisphere(2), Uniform(), 10_000, 1)
    assert cloud.points[:, 2].min() >= 0


@pytest.mark.parametrize("model", MODELS, ids=MODEL_IDS)
def test_samples_lie_on_model(model):
    cloud = sample(model, SmoothBump(0.5), 2000, 3)
    assert cloud.points.shape == (2000, model.ambient_dim)
    assert model.contains(cloud.points).all()
    assert not cloud.points.flags.writeable


def test_sample_needs_positive_n():
    with pytest.raises(ValidationError):
        sample(Sphere(2), Uniform(), 0, 0)


class _Spike(Uniform):
    def unnormalized(self, model, x):
        return np.zeros(np.asarray(x).shape[:-1])


def test_rejection_stall():
    with pytest.raises(RejectionStall):
        list(iter_sample_chunks(Sphere(2), _Spike(), 10, 0))


def _bin_probabilities(model, density, edges):
    """Probability of each chart-rectangle bin by product Gauss-Legendre."""
    x, w = np.polynomial.legendre.leggauss(24)
    probs = np.zeros([len(e) - 1 for e in edges])
    for idx in np.ndindex(*probs.shape):
        grids, weights = [], []
        for k, i in enumerate(idx):
            a, b = edges[k][i], edges[k][i + 1]
            grids.append(0.5 * (b - a) * x + 0.5 * (b + a))
            weights.append(0.5 * (b - a) * w)
        U = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, len(idx))
        W = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), axis=-1).reshape(-1, len(idx)), axis=1)
        probs[idx] = W @ (model.area_element(U) * density.value(model, model._embed(U)))
    return probs.ravel()


@pytest.mark.parametrize("model, density", [
    (Sphere(2), Uniform()),
    (Sphere(2), SmoothBump(0.5)),
    (Hemisphere(2), SmoothBump(-0.6, mode=2)),
    (Cylinder(), SmoothBump(0.5)),
    (Torus(), Uniform()),
    (Torus(), SmoothBump(0.9)),
])
def test_sampler_chi_square(model, density):
    n = 100_000
    cloud = sample(model, density, n, 12)
    lo, hi = model.chart_box()
    edges = [np.linspace(a, b, 9) for a, b in zip(lo, hi)]
    u = model.chart(cloud.points)
    counts, _ = np.histogramdd(u, bins=edges)
    probs = _bin_probabilities(model, density, edges)
    assert probs.sum() == pytest.approx(1.0, rel=1e-9)
    stat = chisquare(counts.ravel(), n * probs / probs.sum())
    assert stat.pvalue > 1e-3


def test_flat_disk_radial_law():
    n = 100_000
    cloud = sample(FlatDisk(2, 2, radius=1.0), Uniform(), n, 5)
    r = np.linalg.norm(cloud.points, axis=1)
    edges = np.linspace(0, 1, 11)
    counts, _ = np.histogram(r, bins=edges)
    expected = n * np.diff(edges**2)
    assert chisquare(counts, expected).pvalue > 1e-3
