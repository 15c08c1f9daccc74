"""Compare closed-form ball moments with quadrature and Monte Carlo.

Run with ``python3 demos/moments_demo.py``.
"""

from manifold_hessian.moments import greeks, oracle_table

for d in (2, 3):
    rows = oracle_table(d, delta=0.0, eps=0.1, n_mc=200_000, seed=0, z_sigma=4.0)
    print(f"d = {d}: {sum(r['pass'] for r in rows)}/{len(rows)} rows agree")
    for r in rows[:6]:
        print(f"  {r['name']:<14} closed {r['closed_form']:+.6e}  mc {r['mc']:+.6e} +- {r['mc_stderr']:.1e}")

# the Greek coefficients of the truncated ball change smoothly with the cut depth
print("\ndelta   gamma1      alpha1      beta1")
for delta in (0.0, 0.25, 0.5, 0.75):
    g = greeks(2, delta, 0.1)
    print(f"{delta:<7} {g.gamma1:+.3e}  {g.alpha1:+.3e}  {g.beta1:+.3e}")
