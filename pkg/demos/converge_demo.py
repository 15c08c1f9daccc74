"""Hessian error versus eps on the sphere, in the interior and near an edge.

Run with ``python3 demos/converge_demo.py`` (about a minute).
Sixteen queries and one repetition keep it quick; the boundary band is
noisy at this size.
"""

from manifold_hessian.experiments import ConvergenceConfig, QuerySpec, convergence_run
from manifold_hessian.manifolds import Hemisphere, Sphere, Uniform

runs = {
    "sphere, interior": ConvergenceConfig(Sphere(2), field="linear", density=Uniform(), c=8, n_max=10_000,
                                          query=QuerySpec("interior", 16), repetitions=1, seed=0),
    "hemisphere, boundary band": ConvergenceConfig(Hemisphere(2), field="linear", density=Uniform(), c=8,
                                                   n_max=10_000, query=QuerySpec("boundary", 16),
                                                   repetitions=1, seed=0),
}
for label, cfg in runs.items():
    rep = convergence_run(cfg)
    print(label)
    for r in rep.records:
        print(f"  eps={r['eps']:.2f}  mean Hessian error {r['mean_e_hess_frob']:.4f}")
    slope, _, lo, hi = rep.slopes["e_hess_frob"]
    print(f"  fitted rate {slope:.2f}  (95% CI {lo:.2f} to {hi:.2f}), failed fits {rep.failures}")
