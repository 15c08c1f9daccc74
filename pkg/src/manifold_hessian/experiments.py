"""Empirical checks of the estimator's convergence and of the Gram matrix
expansions.

Clouds in the convergence experiments can be large (tens of millions of
points), so they are generated chunk by chunk and only the points that
fall within eps of some query point are kept.  Neighbourhoods computed on
the kept subset are identical to those on the full cloud.
"""

from dataclasses import dataclass, field as dc_field
import math
import warnings

import numpy as np
from scipy.spatial import cKDTree

from ._rng import derive_seed, rng_stream
from .errors import (
    EmptyNeighborhood,
    NonPositiveError,
    NumericalError,
    ValidationError,
)
from .estimator import (
    NeighborIndex,
    align_frames,
    build_design_matrix,
    epsilon_neighbors,
    estimate_at,
    estimate_error,
    local_pca,
    project,
)
from .manifolds import (
    FlatDisk,
    ScalarField,
    field_catalog,
    iter_sample_chunks,
    make_density,
    sample,
    true_derivatives,
)
from .moments import BLOCK_PAIRS, block_slices, build_L0, predicted_orders

CHANNELS = ("e_hess_frob", "e_trace", "e_grad", "e_f")


# ---------------------------------------------------------------------------
# Gram matrices


def empirical_gram(cloud, z, eps, d, basis=None, index=None):
    """(1/k) Z^T Z for the eps-neighbourhood of z.

    The local basis is the PCA basis unless ``basis`` is given.
    """
    idx = epsilon_neighbors(cloud, z, eps, index=index)
    if len(idx) == 0:
        raise EmptyNeighborhood(f"no sample within eps={eps} of z")
    U = local_pca(cloud, idx, z, d) if basis is None else np.asarray(basis, dtype=float)
    Z = build_design_matrix(project(U, cloud, idx, z))
    return Z.T @ Z / len(idx)


def n_of_eps(eps, c, A):
    """Sample size rule n = ceil(A eps^-c)."""
    return int(math.ceil(A * eps ** (-c)))


def calibrate_A(eps_max, n_max, c):
    """Constant A giving n(eps_max) = n_max."""
    return n_max * eps_max**c


@dataclass
class GramConfig:
    """Settings for :func:`gram_deviation_experiment`.

    The query point sits at chart position ``(-r, 0, ..., 0)`` of a flat
    disk with ``r = radius - boundary_distance``.  The inward normal at the
    nearest boundary point is the first chart axis; the local basis puts
    it last so the truncated-ball Greeks apply.
    """

    d: int = 2
    p: int = 2
    radius: float = 1.0
    boundary_distance: float = 1.0
    eps_grid: tuple = (0.4, 0.3, 0.22, 0.16)
    c: float = 6.0
    n_max: int = 200_000
    seed: int = 0
    factor: float = 3.0
    repetitions: int = 4

    def __post_init__(self):
        _check_grid(self.eps_grid)
        if self.repetitions < 1:
            raise ValidationError("repetitions must be positive", key="repetitions")
        if not 0 < self.boundary_distance <= self.radius:
            raise ValidationError("boundary_distance must lie in (0, radius]", key="boundary_distance")


@dataclass
class GramReport:
    records: list
    blocks: dict
    passed: bool


def _check_grid(grid):
    grid = [float(e) for e in grid]
    if len(grid) < 1 or any(e <= 0 for e in grid):
        raise ValidationError("eps_grid must contain positive values", key="eps_grid")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("eps_grid must be strictly decreasing", key="eps_grid")


def _flat_query(cfg):
    model = FlatDisk(cfg.d, cfg.p, cfg.radius)
    z = np.zeros(cfg.p)
    z[0] = -(cfg.radius - cfg.boundary_distance)
    # inward normal at the nearest boundary point is +e_1; put it last
    order = list(range(1, cfg.d)) + [0]
    basis = np.eye(cfg.p)[:, order]
    return model, z, basis


def gram_deviation_experiment(cfg):
    """Blockwise deviation of the empirical Gram matrix from L0.

    For every eps and repetition a fresh cloud of n(eps) uniform points is
    drawn.  The reference is the interior leading matrix when the ball stays
    inside the disk, and the truncated-ball matrix otherwise.  The deviation
    of a block is the root mean square over repetitions of its max-abs
    entry.  A block passes when for every pair eps_i > eps_j

        dev_j / dev_i <= factor * pred_j / pred_i,

    with pred = W-order + LD-order, so it shrinks at least at the predicted
    order up to ``factor``.
    """
    model, z, basis = _flat_query(cfg)
    density = make_density("Uniform")
    A = calibrate_A(cfg.eps_grid[0], cfg.n_max, cfg.c)
    sl = block_slices(cfg.d)
    records = []
    for i, eps in enumerate(cfg.eps_grid):
        n = n_of_eps(eps, cfg.c, A)
        delta = max(0.0, 1.0 - cfg.boundary_distance / eps)
        interior = delta == 0.0
        L0 = build_L0("InteriorDirect", cfg.d, eps) if interior else build_L0(
            "TruncatedHeuristic", cfg.d, eps, delta=delta
        )
        sq = {b: 0.0 for b in BLOCK_PAIRS}
        grams, ks = [], []
        for rep in range(cfg.repetitions):
            pts = _stream_neighbors(model, density, n, derive_seed(cfg.seed, "gram", rep, i),
                                    z[None, :], eps)
            G = empirical_gram(pts, z, eps, cfg.d, basis=basis)
            grams.append(G)
            ks.append(len(pts))
            for b in BLOCK_PAIRS:
                blk = (G - L0.matrix)[sl[b[0]], sl[b[1]]]
                sq[b] += float(np.max(np.abs(blk))) ** 2 if blk.size else 0.0
        dev = {b: math.sqrt(v / cfg.repetitions) for b, v in sq.items()}
        orders = predicted_orders(cfg.d, eps, n, interior=interior)
        pred = {b: orders["W"][b] + orders["LD"][b] for b in BLOCK_PAIRS}
        records.append({"eps": eps, "n": n, "k": int(np.mean(ks)), "delta": delta,
                        "omega": orders["omega"], "deviation": dev, "predicted": pred,
                        "empirical": np.mean(grams, axis=0), "L0": L0.matrix})
    blocks = {}
    for b in BLOCK_PAIRS:
        devs = np.array([r["deviation"][b] for r in records])
        preds = np.array([r["predicted"][b] for r in records])
        if b == "AA":
            ok = bool(np.all(devs == 0.0))
            slope = math.nan
        else:
            ok = all(
                devs[j] * preds[i] <= cfg.factor * preds[j] * devs[i]
                for i in range(len(devs)) for j in range(i + 1, len(devs))
            )
            slope = _slope(cfg.eps_grid, devs) if np.all(devs > 0) and len(devs) > 1 else math.nan
        blocks[b] = {"pass": ok, "slope": slope,
                     "predicted_slope": _slope(cfg.eps_grid, preds) if b != "AA" and len(preds) > 1 else math.nan}
    return GramReport(records, blocks, all(v["pass"] for v in blocks.values()))


def _slope(eps, vals):
    return float(np.polyfit(np.log(eps), np.log(vals), 1)[0])


# ---------------------------------------------------------------------------
# convergence experiments


@dataclass
class QuerySpec:
    """Where the estimator is evaluated.

    kind="interior"  ``count`` points at distance > sqrt(max eps) from the
                     boundary, fixed for a repetition
    kind="boundary"  ``count`` points within sqrt(eps) of the boundary,
                     re-drawn for every eps
    kind="fixed"     the given ``points``
    """

    kind: str = "interior"
    count: int = 64
    points: tuple = ()

    def __post_init__(self):
        if self.kind not in ("interior", "boundary", "fixed"):
            raise ValidationError(f"unknown query kind {self.kind!r}", key="query")
        if self.kind == "fixed" and len(self.points) == 0:
            raise ValidationError("fixed queries need points", key="query")
        if self.kind != "fixed" and self.count < 1:
            raise ValidationError("query count must be positive", key="query")


@dataclass
class ConvergenceConfig:
    model: object
    field: object = "linear"
    density: object = "Uniform"
    eps_grid: tuple = (0.4, 0.3, 0.22, 0.16)
    c: float = 8.0
    n_max: int = 20_000
    query: QuerySpec = dc_field(default_factory=QuerySpec)
    repetitions: int = 3
    seed: int = 0
    basis: str = "pca"

    def __post_init__(self):
        _check_grid(self.eps_grid)
        d = self.model.intrinsic_dim
        if self.c < d + 4:
            raise ValidationError(f"n-rule exponent c={self.c} must be at least d+4={d + 4}", key="c")
        if self.repetitions < 1:
            raise ValidationError("repetitions must be positive", key="repetitions")
        if self.basis not in ("pca", "true"):
            raise ValidationError("basis must be 'pca' or 'true'", key="basis")
        self.density = make_density(self.density)
        if isinstance(self.field, str):
            cat = field_catalog(self.model)
            if self.field not in cat:
                raise ValidationError(f"field {self.field!r} not in {sorted(cat)}", key="field")
            self.field = cat[self.field]
        elif not isinstance(self.field, ScalarField):
            raise ValidationError("field must be a catalog name or ScalarField", key="field")

    @property
    def A(self):
        return calibrate_A(self.eps_grid[0], self.n_max, self.c)

    def n(self, eps):
        return n_of_eps(eps, self.c, self.A)


@dataclass
class ConvergenceReport:
    region: str
    records: list
    raw: list
    slopes: dict
    failures: int
    flags: list

    @property
    def tau_hat(self):
        return self.slopes["e_hess_frob"][0]

    def to_dict(self):
        return {
            "region": self.region,
            "records": self.records,
            "slopes": {k: dict(zip(("slope", "intercept", "ci_low", "ci_high"), v))
                       for k, v in self.slopes.items()},
            "failures": self.failures,
            "flags": self.flags,
        }


def _draw_model_points(model, density, count, seed, keep):
    """``count`` samples from the model that satisfy ``keep``."""
    out = []
    got = 0
    chunk = 0
    while got < count:
        pts = sample(model, density, max(4 * count, 256), derive_seed(seed, "draw", chunk)).points
        pts = pts[keep(pts)]
        out.append(pts)
        got += len(pts)
        chunk += 1
        if chunk > 1000:
            raise NumericalError("query region too small to draw points from")
    return np.concatenate(out)[:count]


def _boundary_distances(model, pts):
    return np.array([model.boundary_distance(x) for x in pts])


def query_points(model, density, spec, eps, eps_max, seed):
    """Query points for one (repetition, eps) cell; see :class:`QuerySpec`."""
    if spec.kind == "fixed":
        return np.array([model.check_point(z) for z in spec.points])
    if spec.kind == "interior":
        sigma = math.sqrt(eps_max)
        return _draw_model_points(
            model, density, spec.count, seed, lambda p: _boundary_distances(model, p) > sigma
        )
    if not model.has_boundary:
        raise ValidationError(f"{model.name} has no boundary band", key="query")
    sigma = math.sqrt(eps)
    return _draw_model_points(
        model, density, spec.count, seed, lambda p: _boundary_distances(model, p) <= sigma
    )


def _stream_neighbors(model, density, n, seed, queries, eps):
    """Points of an n-point cloud within eps of at least one query point."""
    tree = cKDTree(queries)
    kept = []
    for chunk in iter_sample_chunks(model, density, n, seed, purpose="cloud"):
        dist, _ = tree.query(chunk, k=1, distance_upper_bound=eps * (1 + 1e-9))
        kept.append(chunk[np.isfinite(dist)])
    return np.concatenate(kept) if kept else np.zeros((0, model.ambient_dim))


def convergence_run(cfg):
    """Estimator errors over an eps grid, with fitted rates.

    For each repetition and eps a fresh cloud of n(eps) points is drawn,
    the estimator runs at every query point and its output is compared with
    the exact derivatives after Procrustes alignment.  Estimation failures
    are counted and left out.
    """
    model, density, fld = cfg.model, cfg.density, cfg.field
    d = model.intrinsic_dim
    raw = []
    failures = 0
    eps_max = cfg.eps_grid[0]
    for rep in range(cfg.repetitions):
        fixed_q = None
        if cfg.query.kind != "boundary":
            fixed_q = query_points(model, density, cfg.query, eps_max, eps_max,
                                   derive_seed(cfg.seed, "query", rep))
        for i, eps in enumerate(cfg.eps_grid):
            n = cfg.n(eps)
            Zq = fixed_q if fixed_q is not None else query_points(
                model, density, cfg.query, eps, eps_max, derive_seed(cfg.seed, "query", rep, i)
            )
            pts = _stream_neighbors(model, density, n, derive_seed(cfg.seed, "cloud", rep, i), Zq, eps)
            fvals = fld.values(model, pts) if len(pts) else np.zeros(0)
            index = NeighborIndex(pts) if len(pts) else None
            for j, z in enumerate(Zq):
                E = model.tangent_frame(z)
                try:
                    est = estimate_at(pts, fvals, z, eps, d,
                                      basis=E if cfg.basis == "true" else None, index=index)
                    R = align_frames(est.U, E)
                except NumericalError:
                    failures += 1
                    continue
                err = estimate_error(est, true_derivatives(model, fld, z), R)
                raw.append({"rep": rep, "eps": eps, "n": n, "point_id": j,
                            "e_f": err.e_f, "e_grad": err.e_grad,
                            "e_hess_frob": err.e_hess_frob, "e_trace": err.e_trace,
                            "k_z": est.k_z})
    records = []
    for eps in cfg.eps_grid:
        rows = [r for r in raw if r["eps"] == eps]
        rec = {"eps": eps, "n": cfg.n(eps), "count": len(rows)}
        for ch in CHANNELS:
            vals = np.array([r[ch] for r in rows]) if rows else np.array([math.nan])
            rec["mean_" + ch] = float(np.mean(vals))
            rec["p90_" + ch] = float(np.percentile(vals, 90))
        ks = np.array([r["k_z"] for r in rows]) if rows else np.array([0])
        rec.update(k_min=int(ks.min()), k_mean=float(ks.mean()), k_max=int(ks.max()))
        records.append(rec)
    flags = []
    slopes = {}
    for ch in CHANNELS:
        pts_ch = [(r["eps"], r[ch]) for r in raw]
        if len({e for e, _ in pts_ch}) < 3:
            slopes[ch] = (math.nan,) * 4
            continue
        if max(v for _, v in pts_ch) < 1e-9:
            flags.append(f"{ch}: errors at solver noise floor, slope not meaningful")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            slopes[ch] = rate_regress(pts_ch, seed=derive_seed(cfg.seed, "bootstrap", len(ch)))
    return ConvergenceReport(cfg.query.kind, records, raw, slopes, failures, flags)


def rate_regress(points, n_boot=1000, seed=0):
    """Fit log(mean error) = slope * log(eps) + intercept.

    ``points`` is a list of (eps, err) pairs with any number of errors per
    eps.  The confidence interval is the 2.5-97.5 percentile range of the
    slope over ``n_boot`` bootstrap resamples of the errors within each eps.

    Zero errors are floored at 1e-15 with a warning; negative or NaN
    errors raise :class:`NonPositiveError`.
    """
    eps = np.array([p[0] for p in points], dtype=float)
    err = np.array([p[1] for p in points], dtype=float)
    if np.any(~np.isfinite(err)) or np.any(err < 0):
        raise NonPositiveError("errors must be finite and nonnegative")
    if np.any(err <= 0):
        warnings.warn("zero errors floored at 1e-15 before taking logs", RuntimeWarning)
        err = np.maximum(err, 1e-15)
    levels = np.unique(eps)[::-1]
    if len(levels) < 3:
        raise ValidationError("rate_regress needs at least 3 distinct eps values", key="points")
    groups = [err[eps == e] for e in levels]
    x = np.log(levels)

    def fit(means):
        slope, intercept = np.polyfit(x, np.log(means), 1)
        return slope, intercept

    slope, intercept = fit(np.array([g.mean() for g in groups]))
    rng = rng_stream(seed, "rate_regress")
    boot = np.empty(n_boot)
    for b in range(n_boot):
        means = np.array([rng.choice(g, size=len(g)).mean() for g in groups])
        boot[b] = fit(means)[0]
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return float(slope), float(intercept), float(lo), float(hi)


# ---------------------------------------------------------------------------
# Hessian energy


def hessian_energy(cloud, fvals, eps, d, query_idx, index=None):
    """Monte Carlo estimate of the integral of |Hess f|^2 over the manifold.

    Averages ||Hess_hat||_F^2 / rho(z) over query points taken from the
    cloud, which is unbiased for the integral when the points follow rho.
    """
    pts = cloud.points
    query_idx = np.asarray(query_idx, dtype=np.intp)
    if index is None:
        index = NeighborIndex(pts)
    zs = pts[query_idx]
    rho = cloud.density.value(cloud.model, zs)
    total = 0.0
    for z, r in zip(zs, rho):
        est = estimate_at(pts, fvals, z, eps, d, index=index)
        total += float(np.sum(est.hess**2)) / r
    return total / len(query_idx)
