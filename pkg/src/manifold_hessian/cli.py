"""Command-line interface.

Exit status is 0 on success, 2 for invalid input and 3 when a numerical
routine fails.  Every subcommand accepts ``--config <json>``; explicit
flags override keys from the file.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig, parse_config
from .errors import NumericalError, ValidationError
from .estimator import estimate_at
from .experiments import (
    ConvergenceConfig,
    GramConfig,
    QuerySpec,
    convergence_run,
    gram_deviation_experiment,
)
from .manifolds import field_catalog, make_density, make_model, sample
from .moments import BLOCK_PAIRS, oracle_table
from .persist import json_text, read_matrix_csv, read_meta, write_cloud, write_csv, write_json


def _json_arg(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from None


def _floats(text):
    return [float(v) for v in text.split(",")]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="manifold-hessian",
        description="Hessian estimation on sampled manifolds, moment oracles and rate experiments.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("sample", help="draw a point cloud and write it as CSV")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--model", help="FlatDisk, Sphere, Hemisphere, Cylinder or Torus")
    p.add_argument("--params", type=_json_arg, help='model parameters as JSON, e.g. \'{"d": 2}\'')
    p.add_argument("--density", type=_json_arg,
                   help='"Uniform" or {"density": "SmoothBump", "amplitude": a, "mode": k}')
    p.add_argument("--n", type=int, help="number of points")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output CSV (a .meta.json sidecar is written next to it)")

    p = sub.add_parser("estimate", help="estimate f, gradient and Hessian at one point")
    p.add_argument("--config")
    p.add_argument("--cloud", help="point cloud CSV")
    p.add_argument("--fvals", help="CSV with one value per point, or a field name from the catalog")
    p.add_argument("--z", help="comma-separated coordinates, or a row index of the cloud")
    p.add_argument("--eps", type=float)
    p.add_argument("--dim", type=int, help="intrinsic dimension d")
    p.add_argument("--out", help="output JSON (stdout when omitted)")

    p = sub.add_parser("moments", help="closed forms vs quadrature vs Monte Carlo")
    p.add_argument("--config")
    p.add_argument("--d", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--mc-samples", dest="mc_samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--report", help="output CSV (stdout when omitted)")

    p = sub.add_parser("gram", help="empirical Gram matrix vs its leading-order approximation")
    p.add_argument("--config")
    p.add_argument("--out", help="output CSV (stdout when omitted)")

    p = sub.add_parser("converge", help="error-vs-eps experiment with fitted rates")
    p.add_argument("--config")
    p.add_argument("--out-prefix", dest="out_prefix",
                   help="writes <prefix>_raw.csv and <prefix>_report.json")
    return parser


def config_from_args(args):
    """Merge a config file with command-line overrides into a RunConfig."""
    doc = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.loads(fh.read())
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}", key="config") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON in {args.config}: {exc}", key="config") from None
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object", key="config")
        doc.pop("subcommand", None)
    for key, value in vars(args).items():
        if key in ("config", "subcommand") or value is None:
            continue
        doc[key] = value
    return parse_config(json.dumps(doc), subcommand=args.subcommand)


# ---------------------------------------------------------------------------
# subcommands


def _emit(text, path):
    if path:
        from .persist import atomic_write

        atomic_write(path, text)
    else:
        sys.stdout.write(text)


def run_sample(cfg):
    p = cfg.params
    model = make_model(p["model"], p["params"])
    cloud = sample(model, make_density(p["density"]), int(p["n"]), p["seed"])
    if p["out"]:
        write_cloud(p["out"], cloud)
    else:
        from .persist import csv_text

        sys.stdout.write(csv_text([f"x{i + 1}" for i in range(model.ambient_dim)], cloud.points.tolist()))


def _load_fvals(spec, cloud_path, points):
    if os.path.exists(spec):
        _, data = read_matrix_csv(spec)
        vals = data.reshape(-1) if data.ndim == 2 and data.shape[1] == 1 else None
        if vals is None:
            raise ValidationError("fvals CSV must have exactly one column", key="fvals")
        return vals
    meta = read_meta(cloud_path)
    if meta is None:
        raise ValidationError(
            f"{spec!r} is not a file and the cloud has no metadata to resolve a field name",
            key="fvals",
        )
    model = make_model(meta["model"], meta["params"])
    cat = field_catalog(model)
    if spec not in cat:
        raise ValidationError(f"unknown field {spec!r}; catalog: {sorted(cat)}", key="fvals")
    return cat[spec].values(model, points) if len(points) else np.zeros(0)


def run_estimate(cfg):
    p = cfg.params
    _, X = read_matrix_csv(p["cloud"])
    fvals = _load_fvals(str(p["fvals"]), p["cloud"], X)
    zspec = p["z"]
    if isinstance(zspec, (list, tuple)):
        z = np.asarray(zspec, dtype=float)
    elif isinstance(zspec, int) or (isinstance(zspec, str) and zspec.strip().lstrip("-").isdigit()):
        i = int(zspec)
        if not 0 <= i < len(X):
            raise ValidationError(f"row index {i} outside the cloud", key="z")
        z = X[i]
    else:
        try:
            z = np.array(_floats(str(zspec)))
        except ValueError:
            raise ValidationError(f"cannot parse z={zspec!r}", key="z") from None
    if z.shape != (X.shape[1],):
        raise ValidationError(f"z must have {X.shape[1]} coordinates", key="z")
    est = estimate_at(X, fvals, z, float(p["eps"]), int(p["dim"]))
    _emit(json_text(est.to_dict()), p["out"])


def run_moments(cfg):
    p = cfg.params
    rows = oracle_table(int(p["d"]), float(p["delta"]), float(p["eps"]), int(p["mc_samples"]), p["seed"])
    header = ["name", "closed_form", "quadrature", "mc", "mc_stderr", "pass"]
    from .persist import csv_text

    _emit(csv_text(header, [[r[h] for h in header] for r in rows]), p["report"])
    return 0


def run_gram(cfg):
    p = cfg.params
    gcfg = GramConfig(d=int(p["d"]), p=int(p["p"]), radius=float(p["radius"]),
                      boundary_distance=float(p["boundary_distance"]),
                      eps_grid=tuple(p["eps_grid"]), c=float(p["c"]), n_max=int(p["n_max"]),
                      seed=p["seed"], factor=float(p["factor"]),
                      repetitions=int(p["repetitions"]))
    report = gram_deviation_experiment(gcfg)
    rows = []
    for rec in report.records:
        for b in BLOCK_PAIRS:
            rows.append([rec["eps"], rec["n"], rec["delta"], rec["omega"], b,
                         rec["deviation"][b], rec["predicted"][b], report.blocks[b]["pass"]])
    header = ["eps", "n", "delta", "omega", "block", "deviation", "predicted", "block_pass"]
    from .persist import csv_text

    _emit(csv_text(header, rows), p["out"])


def convergence_config(params):
    """ConvergenceConfig from validated converge parameters."""
    q = params["query"]
    query = QuerySpec(kind=q["kind"], count=int(q.get("count", 64)),
                      points=tuple(tuple(x) for x in q.get("points", ())))
    return ConvergenceConfig(
        model=make_model(params["model"], params["params"]),
        field=params["field"],
        density=params["density"],
        eps_grid=tuple(float(e) for e in params["eps_grid"]),
        c=float(params["c"]),
        n_max=int(params["n_max"]),
        query=query,
        repetitions=int(params["repetitions"]),
        seed=params["seed"],
        basis=params["basis"],
    )


def run_converge(cfg):
    p = cfg.params
    report = convergence_run(convergence_config(p))
    lo, hi = p["tau_band"]
    tau = report.tau_hat
    doc = report.to_dict()
    doc["config"] = cfg.to_dict()
    doc["tau_hat"] = tau
    doc["tau_band"] = [lo, hi]
    doc["pass"] = {"tau_in_band": bool(lo <= tau <= hi)}
    count = p["query"].get("count", 64)
    rows = [[r["eps"], r["n"], r["rep"] * count + r["point_id"], r["e_f"], r["e_grad"],
             r["e_hess_frob"], r["e_trace"], r["k_z"]] for r in report.raw]
    header = ["eps", "n", "point_id", "e_f", "e_grad", "e_hess_frob", "e_trace", "k_z"]
    prefix = p["out_prefix"]
    if prefix:
        write_csv(prefix + "_raw.csv", header, rows)
        write_json(prefix + "_report.json", doc)
    else:
        sys.stdout.write(json_text(doc))


RUNNERS = {
    "sample": run_sample,
    "estimate": run_estimate,
    "moments": run_moments,
    "gram": run_gram,
    "converge": run_converge,
}


def run(cfg: RunConfig):
    """Dispatch a validated configuration; returns the exit status."""
    try:
        RUNNERS[cfg.subcommand](cfg)
    except ValidationError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ValidationError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
