"""Estimate value, gradient and Hessian of a field at one point of a sphere.

Run with ``python3 demos/estimate_demo.py``.
"""

import numpy as np

from manifold_hessian.estimator import align_frames, estimate_at
from manifold_hessian.manifolds import AmbientLinear, Sphere, Uniform, sample, true_derivatives

model = Sphere(2)
field = AmbientLinear([0.0, 0.0, 1.0])  # height x3; its Hessian at the north pole is -I
cloud = sample(model, Uniform(), 200_000, seed=1)
fvals = field.values(model, cloud.points)
z = np.array([0.0, 0.0, 1.0])

print(f"{'eps':>6} {'k':>7} {'|H - H_true|_F':>15}  Hessian")
for eps in (0.4, 0.3, 0.2, 0.1):
    est = estimate_at(cloud, fvals, z, eps, 2)
    E = model.tangent_frame(z)
    _, _, H_true = true_derivatives(model, field, z, frame=E)
    # the PCA basis is tilted by O(eps^2); rotate the estimate onto the true frame
    R = align_frames(est.U, E)
    H = R.T @ est.hess @ R
    err = np.linalg.norm(H - H_true)
    print(f"{eps:>6.2f} {est.k_z:>7d} {err:>15.4f}  {np.array2string(H, precision=3).replace(chr(10), '')}")
