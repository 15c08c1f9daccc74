"""Hessian estimation on point clouds sampled from embedded manifolds.

Modules
-------
manifolds    synthetic models with exact geometry, test fields, densities, sampling
estimator    local PCA + quadratic least-squares fit
moments      closed-form moment integrals, truncated-ball constants, leading Gram matrices
experiments  Gram deviation, convergence rates, Hessian energy
config, cli  JSON run configuration and the command-line entry point
"""

from .errors import ManifoldHessianError, NumericalError, ValidationError
from .estimator import (
    HessianEstimate,
    LocalFit,
    align_frames,
    build_design_matrix,
    epsilon_neighbors,
    estimate_at,
    estimate_error,
    extract,
    local_pca,
    project,
    solve_fit,
)
from .manifolds import (
    AmbientLinear,
    ChartPolynomial,
    Cylinder,
    FlatDisk,
    Hemisphere,
    PointCloud,
    SmoothBump,
    Sphere,
    Torus,
    TrigField,
    Uniform,
    field_catalog,
    sample,
    true_derivatives,
)

__version__ = "0.1.0"

__all__ = [
    "align_frames",
    "AmbientLinear",
    "build_design_matrix",
    "ChartPolynomial",
    "Cylinder",
    "epsilon_neighbors",
    "estimate_at",
    "estimate_error",
    "extract",
    "field_catalog",
    "FlatDisk",
    "Hemisphere",
    "HessianEstimate",
    "local_pca",
    "LocalFit",
    "ManifoldHessianError",
    "NumericalError",
    "PointCloud",
    "project",
    "sample",
    "SmoothBump",
    "solve_fit",
    "Sphere",
    "Torus",
    "TrigField",
    "true_derivatives",
    "Uniform",
    "ValidationError",
]
