"""Draw clouds from each model and check them against their charts.

Run with ``python3 demos/sampling_demo.py``.
"""

import numpy as np

from manifold_hessian.manifolds import Cylinder, FlatDisk, Hemisphere, SmoothBump, Sphere, Torus, Uniform, sample

models = [FlatDisk(2, 3), Sphere(2), Hemisphere(2), Cylinder(), Torus()]

print(f"{'model':<12}{'density':<12}{'n':>7}  {'max chart residual':>20}  {'mean point'}")
for model in models:
    for density in (Uniform(), SmoothBump(0.5)):
        cloud = sample(model, density, 20_000, seed=7)
        # map each point to its chart and back; the residual measures membership
        residual = np.abs(model.embed(model.chart(cloud.points)) - cloud.points).max()
        mean = np.array2string(cloud.points.mean(axis=0), precision=3, suppress_small=True)
        print(f"{type(model).__name__:<12}{type(density).__name__:<12}{len(cloud.points):>7}  {residual:>20.2e}  {mean}")

# the same seed gives the same cloud, and a shorter cloud is a prefix of a longer one
a = sample(Sphere(2), Uniform(), 1000, seed=3).points
b = sample(Sphere(2), Uniform(), 5000, seed=3).points
print("prefix property holds:", np.array_equal(a, b[:1000]))
