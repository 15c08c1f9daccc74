import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import special_ortho_group

from manifold_hessian.errors import (
    BadLength,
    DegenerateOverlap,
    IllConditioned,
    RankDeficient,
    TooFewNeighbors,
    ValidationError,
)
from manifold_hessian.estimator import (
    NeighborIndex,
    align_frames,
    build_design_matrix,
    epsilon_neighbors,
    estimate_at,
    estimate_error,
    extract,
    hess_block_index,
    local_fit,
    local_pca,
    min_neighbors,
    n_coefficients,
    pack_hessian,
    paper_hess_index,
    project,
    solve_fit,
)
from manifold_hessian.manifolds import ChartPolynomial, FlatDisk, Sphere, Uniform, sample


def random_quadratic_cloud(rng, d, p, k=60, scale=0.3):
    """Points on a random d-plane in R^p with f quadratic in plane coordinates."""
    B = np.linalg.qr(rng.standard_normal((p, d)))[0]
    z = rng.standard_normal(p)
    Y = scale * rng.uniform(-1, 1, (k, d))
    X = z + Y @ B.T
    f0 = rng.standard_normal()
    g = rng.standard_normal(d)
    H = rng.standard_normal((d, d))
    H = H + H.T
    fvals = f0 + Y @ g + 0.5 * np.einsum("ki,ij,kj->k", Y, H, Y)
    return X, z, fvals, B, (f0, g, H)


# ---------------------------------------------------------------------------
# neighbours


def test_cloud_of_one_point():
    z = np.array([0.1, 0.2, 0.3])
    assert epsilon_neighbors(z[None, :], z, 0.01).tolist() == [0]


def test_closed_ball_includes_boundary():
    eps = 0.25
    X = np.array([[0.5 * eps, 0, 0], [eps, 0, 0], [1.5 * eps, 0, 0]])
    assert epsilon_neighbors(X, np.zeros(3), eps).tolist() == [0, 1]
    assert NeighborIndex(X).query(np.zeros(3), eps).tolist() == [0, 1]


@pytest.mark.parametrize("eps", [0.01, 0.1, 0.5, 3.0])
def test_accelerator_matches_brute_force(eps):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10_000, 3))
    index = NeighborIndex(X)
    for z in rng.standard_normal((20, 3)):
        brute = epsilon_neighbors(X, z, eps)
        fast = epsilon_neighbors(X, z, eps, index=index)
        assert np.array_equal(brute, fast)
        assert np.all(np.diff(fast) > 0)


def test_neighbors_need_positive_eps():
    with pytest.raises(ValidationError):
        epsilon_neighbors(np.zeros((3, 2)), np.zeros(2), 0.0)


# ---------------------------------------------------------------------------
# local PCA and projection


def test_pca_on_planar_data():
    rng = np.random.default_rng(1)
    X = np.column_stack([rng.standard_normal((50, 2)), np.zeros(50)])
    U = local_pca(X, np.arange(50), np.zeros(3), 2)
    assert np.abs(U @ U.T - np.diag([1.0, 1.0, 0.0])).max() < 1e-12
    assert np.abs(U.T @ U - np.eye(2)).max() < 1e-12


def test_pca_sign_convention():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 4))
    U = local_pca(X, np.arange(30), np.zeros(4), 2)
    pivots = np.argmax(np.abs(U), axis=0)
    assert np.all(U[pivots, [0, 1]] > 0)


def test_pca_tangent_angle_on_sphere():
    S = Sphere(2)
    cloud = sample(S, Uniform(), 200_000, 4)
    z = S.embed([1.0, 2.0])
    idx = epsilon_neighbors(cloud, z, 0.1)
    U = local_pca(cloud, idx, z, 2)
    E = S.tangent_frame(z)
    cosines = np.linalg.svd(U.T @ E, compute_uv=False)
    assert np.arccos(np.clip(cosines.min(), -1, 1)) < 0.02


def test_pca_with_exactly_d_points():
    z = np.array([1.0, 1.0, 1.0])
    D = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, -1.0]])
    U = local_pca(z + D, [0, 1], z, 2)
    # the difference vectors lie in the span of U
    assert np.abs(D.T - U @ (U.T @ D.T)).max() < 1e-12


def test_pca_rank_deficient():
    X = np.outer(np.linspace(-1, 1, 10), [1.0, 2.0, 0.5])
    with pytest.raises(RankDeficient):
        local_pca(X, np.arange(10), np.zeros(3), 2)


def test_project_examples():
    z = np.array([0.5, 0.5, 0.0])
    U = np.array([[0.6, 0.0], [0.8, 0.0], [0.0, 1.0]])
    X = np.vstack([z, z + U[:, 0]])
    Q = project(U, X, [0, 1], z)
    assert Q == pytest.approx(np.array([[0.0, 0.0], [1.0, 0.0]]))


def test_project_reconstructs_planar_data():
    rng = np.random.default_rng(3)
    X = np.column_stack([rng.standard_normal((20, 2)), np.zeros(20)])
    z = X[0]
    idx = np.arange(20)
    U = local_pca(X, idx, z, 2)
    Q = project(U, X, idx, z)
    assert np.abs((X - z) - Q @ U.T).max() < 1e-12


# ---------------------------------------------------------------------------
# design matrix


def test_design_row_d2():
    a, b = 0.3, -1.7
    Z = build_design_matrix([[a, b]])
    assert Z[0] == pytest.approx([1, a, b, a * a, b * b, a * b])


def test_design_pair_order_d3():
    q = np.array([[2.0, 3.0, 5.0]])
    Z = build_design_matrix(q)
    assert Z.shape == (1, 10)
    assert Z[0, 7:].tolist() == [6.0, 10.0, 15.0]


def test_design_zero_row():
    assert build_design_matrix(np.zeros((1, 4)))[0].tolist() == [1.0] + [0.0] * 14


@pytest.mark.parametrize("d", range(1, 7))
def test_column_count(d):
    assert build_design_matrix(np.ones((1, d))).shape[1] == n_coefficients(d)


# ---------------------------------------------------------------------------
# least squares


def test_consistent_system():
    rng = np.random.default_rng(5)
    Z = build_design_matrix(rng.uniform(-1, 1, (40, 3)))
    G0 = rng.standard_normal(Z.shape[1])
    assert solve_fit(Z, Z @ G0) == pytest.approx(G0, rel=1e-10)


def test_small_scale_consistent_system():
    rng = np.random.default_rng(6)
    Z = build_design_matrix(1e-3 * rng.uniform(-1, 1, (40, 2)))
    G0 = rng.standard_normal(Z.shape[1])
    assert solve_fit(Z, Z @ G0) == pytest.approx(G0, rel=1e-8)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_too_few_neighbors(d):
    k = min_neighbors(d) - 1
    Z = build_design_matrix(np.random.default_rng(d).standard_normal((k, d)))
    with pytest.raises(TooFewNeighbors):
        solve_fit(Z, np.zeros(k))


def test_ill_conditioned():
    # all points on the line y2 = y1 make the columns dependent
    t = np.linspace(-1, 1, 30)
    Z = build_design_matrix(np.column_stack([t, t]))
    with pytest.raises(IllConditioned):
        solve_fit(Z, np.ones(30))


def test_fvals_length_checked():
    Z = build_design_matrix(np.random.default_rng(0).standard_normal((10, 2)))
    with pytest.raises(BadLength):
        solve_fit(Z, np.zeros(9))


# ---------------------------------------------------------------------------
# index map and extraction


def test_block_index_examples():
    assert hess_block_index(1, 2, 3) == 4
    assert hess_block_index(2, 3, 3) == 6
    assert hess_block_index(1, 3, 3) == 5


@pytest.mark.parametrize("d", range(1, 7))
def test_block_index_is_bijection(d):
    pairs = list(itertools.combinations(range(1, d + 1), 2))
    values = sorted(hess_block_index(i, j, d) for i, j in pairs)
    assert values == list(range(d + 1, d + d * (d - 1) // 2 + 1))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_closed_form_index_agrees_for_small_d(d):
    for i, j in itertools.combinations(range(1, d + 1), 2):
        assert paper_hess_index(i, j, d) == hess_block_index(i, j, d)


def test_closed_form_index_collides_at_d4():
    assert paper_hess_index(2, 4, 4) == paper_hess_index(3, 4, 4) == 9


@pytest.mark.parametrize("d", range(1, 7))
def test_pack_extract_round_trip(d):
    rng = np.random.default_rng(d)
    H = rng.standard_normal((d, d))
    H = H + H.T
    g = rng.standard_normal(d)
    G = np.concatenate([[1.5], g, pack_hessian(H)])
    est = extract(G, d)
    assert est.f0 == 1.5
    assert np.array_equal(est.grad, g)
    assert np.array_equal(est.hess, H)


def test_extract_d2_layout():
    est = extract([7.0, 1.0, 2.0, 3.0, 4.0, 5.0], 2)
    assert est.hess.tolist() == [[6.0, 5.0], [5.0, 8.0]]
    assert est.grad.tolist() == [1.0, 2.0]


def test_extract_bad_length():
    with pytest.raises(BadLength):
        extract(np.zeros(5), 2)


def test_estimate_hess_is_exactly_symmetric():
    rng = np.random.default_rng(8)
    est = extract(rng.standard_normal(n_coefficients(4)), 4)
    assert np.array_equal(est.hess, est.hess.T)


# ---------------------------------------------------------------------------
# end to end


@pytest.fixture(scope="module")
def flat_cloud():
    return sample(FlatDisk(2, 2), Uniform(), 100_000, 10)


def test_flat_u1u2(flat_cloud):
    fld = ChartPolynomial({(1, 1): 1.0})
    fvals = fld.values(flat_cloud.model, flat_cloud.points)
    z = np.array([0.2, -0.1])
    est = estimate_at(flat_cloud, fvals, z, 0.1, 2, basis=np.eye(2))
    assert np.linalg.norm(est.hess - [[0, 1], [1, 0]]) < 5e-2
    est = estimate_at(flat_cloud, fvals, z, 0.1, 2)
    E = np.eye(2)
    err = estimate_error(est, (z[0] * z[1], [z[1], z[0]], np.array([[0, 1], [1, 0.0]])),
                         align_frames(est.U, E))
    assert err.e_hess_frob < 5e-2


def test_constant_field(flat_cloud):
    est = estimate_at(flat_cloud, np.full(len(flat_cloud.points), 2.5), np.zeros(2), 0.1, 2)
    assert est.f0 == pytest.approx(2.5)
    assert np.abs(est.grad).max() < 1e-9
    assert np.abs(est.hess).max() < 1e-7


def test_empty_neighborhood(flat_cloud):
    with pytest.raises(TooFewNeighbors):
        estimate_at(flat_cloud, np.zeros(len(flat_cloud.points)), np.array([5.0, 5.0]), 0.1, 2)


def test_estimate_diagnostics(flat_cloud):
    fit = local_fit(flat_cloud, np.zeros(2), 0.1, 2)
    assert fit.k == len(fit.neighbor_idx)
    assert np.linalg.norm(flat_cloud.points[fit.neighbor_idx], axis=1).max() <= 0.1
    assert fit.Q == pytest.approx((flat_cloud.points[fit.neighbor_idx]) @ fit.U)
    assert fit.rank == 6
    assert fit.cond > 1


def test_estimate_fvals_length_checked(flat_cloud):
    with pytest.raises(BadLength):
        estimate_at(flat_cloud, np.zeros(3), np.zeros(2), 0.1, 2)


def test_to_dict_fields():
    est = extract([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2).with_basis(np.eye(2), 10, 3.0)
    doc = est.to_dict()
    assert set(doc) == {"f0", "grad", "hess", "k_z", "cond", "basis"}
    assert doc["hess"] == [[8.0, 6.0], [6.0, 10.0]]


# ---------------------------------------------------------------------------
# frame alignment and errors


def test_align_identity():
    E = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 2)))[0]
    assert align_frames(E, E) == pytest.approx(np.eye(2))


def test_align_rotated():
    rng = np.random.default_rng(1)
    E = np.linalg.qr(rng.standard_normal((5, 3)))[0]
    R0 = special_ortho_group.rvs(3, random_state=2)
    U = E @ R0
    R = align_frames(U, E)
    assert U @ R == pytest.approx(E)
    assert R == pytest.approx(R0.T)


def test_align_perpendicular():
    with pytest.raises(DegenerateOverlap):
        align_frames(np.eye(4)[:, :2], np.eye(4)[:, 2:])


def test_zero_error_for_exact_estimate():
    G = np.array([1.0, 0.5, -0.5, 1.0, 2.0, 0.25])
    est = extract(G, 2)
    err = estimate_error(est, (est.f0, est.grad, est.hess), np.eye(2))
    assert (err.e_f, err.e_grad, err.e_hess_frob, err.e_trace) == (0, 0, 0, 0)


def test_zero_error_after_frame_rotation():
    t = 0.4
    R0 = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    H = np.array([[1.0, 0.3], [0.3, -2.0]])
    g = np.array([0.7, -0.1])
    U = np.eye(3)[:, :2]
    E = U @ R0
    # the estimate is exact in basis U; the truth is expressed in E
    est = extract(np.concatenate([[0.0], g, pack_hessian(H)]), 2).with_basis(U, 10, 1.0)
    truth = (0.0, R0.T @ g, R0.T @ H @ R0)
    err = estimate_error(est, truth, align_frames(U, E))
    assert err.e_grad == pytest.approx(0, abs=1e-14)
    assert err.e_hess_frob == pytest.approx(0, abs=1e-14)
    assert err.e_trace == pytest.approx(0, abs=1e-14)


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2), st.integers(0, 2**32 - 1))
def test_exact_quadratic_reproduction(d, extra, seed):
    rng = np.random.default_rng(seed)
    X, z, fvals, B, (f0, g, H) = random_quadratic_cloud(rng, d, d + extra, k=3 * n_coefficients(d))
    est = estimate_at(X, fvals, z, 10.0, d, basis=B)
    assert est.f0 == pytest.approx(f0, rel=1e-9, abs=1e-9)
    assert est.grad == pytest.approx(g, rel=1e-9, abs=1e-9)
    assert est.hess == pytest.approx(H, rel=1e-9, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_projection_invariance(d, seed):
    rng = np.random.default_rng(seed)
    X, z, _, _, _ = random_quadratic_cloud(rng, d, d + 1)
    # perturb off the plane so the data is not exactly quadratic
    X = X + 0.01 * rng.standard_normal(X.shape)
    fvals = np.sin(X @ rng.standard_normal(X.shape[1]))
    a = estimate_at(X, fvals, z, 10.0, d)
    R = special_ortho_group.rvs(d, random_state=rng) if d > 1 else np.eye(1)
    b = estimate_at(X, fvals, z, 10.0, d, basis=a.U @ R)
    assert b.f0 == pytest.approx(a.f0, abs=1e-10)
    assert b.grad == pytest.approx(R.T @ a.grad, abs=1e-10)
    assert b.hess == pytest.approx(R.T @ a.hess @ R, abs=1e-9)
    assert np.trace(b.hess) == pytest.approx(np.trace(a.hess), abs=1e-10)
    assert np.linalg.eigvalsh(b.hess) == pytest.approx(np.linalg.eigvalsh(a.hess), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 3), st.integers(0, 2**32 - 1))
def test_ambient_isometry_equivariance(d, seed):
    rng = np.random.default_rng(seed)
    p = d + 2
    X, z, _, _, _ = random_quadratic_cloud(rng, d, p)
    X = X + 0.01 * rng.standard_normal(X.shape)
    fvals = np.cos(X @ rng.standard_normal(p))
    Qm = special_ortho_group.rvs(p, random_state=rng)
    t = rng.standard_normal(p)
    a = estimate_at(X, fvals, z, 10.0, d)
    b = estimate_at(X @ Qm.T + t, fvals, Qm @ z + t, 10.0, d)
    assert b.f0 == pytest.approx(a.f0, abs=1e-9)
    assert np.trace(b.hess) == pytest.approx(np.trace(a.hess), abs=1e-9)
    assert np.linalg.norm(b.grad) == pytest.approx(np.linalg.norm(a.grad), abs=1e-9)
    assert np.linalg.eigvalsh(b.hess) == pytest.approx(np.linalg.eigvalsh(a.hess), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_neighbor_order_invariance(seed):
    rng = np.random.default_rng(seed)
    X, z, _, _, _ = random_quadratic_cloud(rng, 2, 3)
    X = X + 0.01 * rng.standard_normal(X.shape)
    fvals = np.exp(X[:, 0])
    perm = rng.permutation(len(X))
    a = estimate_at(X, fvals, z, 10.0, 2)
    b = estimate_at(X[perm], fvals[perm], z, 10.0, 2)
    assert b.f0 == pytest.approx(a.f0, abs=1e-12)
    assert b.grad == pytest.approx(a.grad, abs=1e-12)
    assert b.hess == pytest.approx(a.hess, abs=1e-12)
