"""Run configuration: JSON parsing, defaults and validation."""

from dataclasses import dataclass, field
import copy
import json
import math

from .errors import ParseError, ValidationError
from .manifolds import MODELS, field_catalog, make_density, make_model

SUBCOMMANDS = ("sample", "estimate", "moments", "gram", "converge")

_REQUIRED = object()

# per subcommand: key -> default (``_REQUIRED`` when there is none)
SCHEMA = {
    "sample": {
        "model": _REQUIRED,
        "params": {},
        "density": "Uniform",
        "field": None,
        "n": 1000,
        "seed": 0,
        "out": None,
    },
    "estimate": {
        "cloud": _REQUIRED,
        "fvals": _REQUIRED,
        "z": _REQUIRED,
        "eps": _REQUIRED,
        "dim": _REQUIRED,
        "seed": 0,
        "out": None,
    },
    "moments": {
        "d": 2,
        "delta": 0.0,
        "eps": 0.1,
        "mc_samples": 1_000_000,
        "seed": 0,
        "report": None,
    },
    "gram": {
        "d": 2,
        "p": 2,
        "radius": 1.0,
        "boundary_distance": 1.0,
        "eps_grid": [0.4, 0.3, 0.22, 0.16],
        "c": 6.0,
        "n_max": 200_000,
        "factor": 3.0,
        "repetitions": 4,
        "seed": 0,
        "out": None,
    },
    "converge": {
        "model": "Sphere",
        "params": {"d": 2},
        "density": "Uniform",
        "field": "linear",
        "eps_grid": [0.4, 0.3, 0.22, 0.16],
        "c": None,
        "n_max": 20_000,
        "query": {"kind": "interior", "count": 64},
        "repetitions": 3,
        "basis": "pca",
        "tau_band": None,
        "seed": 0,
        "out_prefix": None,
    },
}

DEFAULT_TAU_BAND = {"interior": [0.6, 1.4], "fixed": [0.6, 1.4], "boundary": [0.25, 0.85]}


@dataclass
class RunConfig:
    subcommand: str
    params: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.params.get("seed", 0)

    def to_dict(self):
        return {"subcommand": self.subcommand, **copy.deepcopy(self.params)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _positive(params, key, integer=False):
    v = params[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        raise ValidationError(f"{key} must be a positive number", key=key)
    if integer and int(v) != v:
        raise ValidationError(f"{key} must be an integer", key=key)
    if not math.isfinite(v):
        raise ValidationError(f"{key} must be finite", key=key)


def _eps_grid(params):
    grid = params["eps_grid"]
    if not isinstance(grid, list) or len(grid) < 3:
        raise ValidationError("eps_grid must be a list of at least 3 values", key="eps_grid")
    if any(isinstance(e, bool) or not isinstance(e, (int, float)) or not e > 0 for e in grid):
        raise ValidationError("eps_grid entries must be positive numbers", key="eps_grid")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("eps_grid must be strictly decreasing", key="eps_grid")


def _model(params):
    if params["model"] not in MODELS:
        raise ValidationError(f"unknown model {params['model']!r}", key="model")
    if not isinstance(params["params"], dict):
        raise ValidationError("params must be an object", key="params")
    model = make_model(params["model"], params["params"])
    try:
        make_density(params["density"])
    except ValidationError as exc:
        raise ValidationError(str(exc), key="density") from None
    fld = params.get("field")
    if fld is not None and fld not in field_catalog(model):
        raise ValidationError(
            f"field {fld!r} not in catalog {sorted(field_catalog(model))}", key="field"
        )
    return model


def _validate(sub, p):
    if not isinstance(p["seed"], int) or isinstance(p["seed"], bool) or p["seed"] < 0:
        raise ValidationError("seed must be a nonnegative integer", key="seed")
    if sub == "sample":
        _model(p)
        _positive(p, "n", integer=True)
    elif sub == "estimate":
        _positive(p, "eps")
        _positive(p, "dim", integer=True)
    elif sub == "moments":
        _positive(p, "d", integer=True)
        if not 0 <= p["delta"] < 1:
            raise ValidationError("delta must lie in [0, 1)", key="delta")
        _positive(p, "eps")
        _positive(p, "mc_samples", integer=True)
        if p["mc_samples"] < 1000:
            raise ValidationError("mc_samples must be at least 1000", key="mc_samples")
    elif sub == "gram":
        for k in ("d", "p", "n_max", "repetitions"):
            _positive(p, k, integer=True)
        for k in ("radius", "boundary_distance", "c", "factor"):
            _positive(p, k)
        _eps_grid(p)
    elif sub == "converge":
        model = _model(p)
        _eps_grid(p)
        _positive(p, "n_max", integer=True)
        _positive(p, "repetitions", integer=True)
        if p["c"] is None:
            p["c"] = model.intrinsic_dim + 6
        _positive(p, "c")
        if p["c"] < model.intrinsic_dim + 4:
            raise ValidationError("c must be at least d+4", key="c")
        q = p["query"]
        if not isinstance(q, dict) or q.get("kind") not in ("interior", "boundary", "fixed"):
            raise ValidationError("query must be {kind: interior|boundary|fixed, ...}", key="query")
        extra = set(q) - {"kind", "count", "points"}
        if extra:
            raise ValidationError(f"unknown query keys {sorted(extra)}", key="query")
        if p["basis"] not in ("pca", "true"):
            raise ValidationError("basis must be 'pca' or 'true'", key="basis")
        if p["tau_band"] is None:
            p["tau_band"] = list(DEFAULT_TAU_BAND[q["kind"]])
        band = p["tau_band"]
        if not (isinstance(band, list) and len(band) == 2 and band[0] <= band[1]):
            raise ValidationError("tau_band must be [low, high]", key="tau_band")


def parse_config(text, subcommand=None):
    """Parse and validate a JSON run configuration.

    The subcommand comes from a ``"subcommand"`` key in the document or
    from the argument.  Missing keys get their defaults; unknown keys and
    invalid values raise :class:`ValidationError` naming the key.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("configuration must be a JSON object")
    doc = dict(doc)
    sub = doc.pop("subcommand", subcommand)
    if subcommand is not None and sub != subcommand:
        raise ValidationError(f"config is for {sub!r}, not {subcommand!r}", key="subcommand")
    if sub not in SCHEMA:
        raise ValidationError(f"unknown subcommand {sub!r}", key="subcommand")
    schema = SCHEMA[sub]
    for key in doc:
        if key not in schema:
            raise ValidationError(f"unknown key {key!r}", key=key)
    params = {}
    for key, default in schema.items():
        if key in doc:
            params[key] = doc[key]
        elif default is _REQUIRED:
            raise ValidationError(f"missing required key {key!r}", key=key)
        else:
            params[key] = copy.deepcopy(default)
    _validate(sub, params)
    return RunConfig(sub, params)
