"""Watch the empirical Gram matrix approach its leading-order form.

Run with ``python3 demos/gram_demo.py`` (about a minute).
"""

from manifold_hessian.experiments import GramConfig, gram_deviation_experiment

for distance in (1.0, 0.2):
    cfg = GramConfig(eps_grid=(0.4, 0.3, 0.22), boundary_distance=distance)
    rep = gram_deviation_experiment(cfg)
    print(f"query at distance {distance} from the edge: all blocks pass = {rep.passed}")
    for r in rep.records:
        devs = "  ".join(f"{b}={r['deviation'][b]:.1e}" for b in ("AB", "BB", "CC", "DD"))
        print(f"  eps={r['eps']:.2f} n={r['n']:>6} delta={r['delta']:.2f}  {devs}")
    slopes = "  ".join(f"{b}={v['slope']:.2f}/{v['predicted_slope']:.2f}" for b, v in rep.blocks.items() if b != "AA")
    print(f"  fitted/predicted slopes: {slopes}")
