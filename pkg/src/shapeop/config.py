"""Run configuration: schema, defaults, validation, and object builders.

The config is a JSON document with five sections (atlas, pde, frame,
surrogate, bench) plus top-level seed / output_dir / jobs. Unknown keys are
rejected with their full path; all defaults live in DEFAULT_CONFIG and are
documented in the README. ``--set a.b.c=value`` overrides parse JSON literals
where possible and fall back to strings.
"""

from __future__ import annotations

import copy
import json
from typing import Any, Optional

from .errors import ConfigError
from . import pullback as pb
from .shape_param import (
    ConstantFeature,
    Domain,
    IdentityField,
    LinearFeature,
    PolyBubbleFeature,
    ShapeAtlas,
    SineFeature,
    WeightSequence,
    bubble_feature_catalog,
    gamma_sequence,
    make_atlas,
    scaled_atlas,
    sine_feature_catalog,
)

__all__ = [
    "DEFAULT_CONFIG",
    "load_config",
    "validate_config",
    "apply_overrides",
    "build_base_atlas",
    "build_effective_atlas",
    "build_source",
    "build_diffusion",
    "build_problem_factory",
]

DEFAULT_CONFIG: dict = {
    "seed": 20260809,
    "output_dir": "shapeop_out",
    "jobs": 1,
    "atlas": {
        "domain": "square",           # square | disk
        "nominal": "identity",
        "feature_catalog": "sine",    # sine | bubble
        "features": None,             # explicit feature list overriding the catalog
        "truncation_dim": 8,
        "weights": {"c": 1.0, "beta": 2.0},   # w_k = c * k^(-beta)
        "scaling": {                  # cube-set scaling sigma_r^s; null disables
            "r": "auto",              # "auto" solves r from c_gamma_target
            "s": 2.0,
            "c_gamma_target": 0.3,
        },
    },
    "pde": {
        "model": "poisson",           # poisson | diffusion_eulerian | diffusion_lagrangian
        "source": {"kind": "manufactured_sine"},
        "diffusion": None,            # required for the diffusion models
    },
    "frame": {
        "decoder": "sine_h1",         # sine_h1 | sine_l2
        "m_ref": 128,                 # reference truncation for error measurement
    },
    "surrogate": {
        "kind": "spectral",
        "budget": 64,                 # dof budget for cmd_fit
        "m_out": "auto",              # "auto" balances decoder tail vs parametric error
        "nn": {
            "arch": [64, 64, 64],
            "epochs": 5000,
            "lr": 0.01,
            "lr_decay": 0.5,
            "decay_every": 1000,
            "n_train": 128,
        },
    },
    "bench": {
        "n_schedule": [8, 16, 32, 64, 128, 256],
        "h": 0.015625,                # 1/64 high-fidelity oracle
        "h_coarse": 0.03125,          # 1/32 for the Richardson floor estimate
        "n_sup": 200,                 # uniform samples added to the corners
        "n_mc": 200,                  # Monte-Carlo sample count (subset of n_sup pool)
        "n_probe": 5,                 # held-out probe points for the m_out balance
        "delta": 0.25,                # rate-comparison slack
        "fd_h": 0.03125,              # mesh size for the derivative-decay table
        "nn": False,                  # also train and score a ReLU surrogate
    },
}

_SOURCE_KINDS = {"constant", "trig", "manufactured_sine"}
_DIFFUSION_KINDS = {"constant", "trig", "piecewise"}
_FEATURE_KINDS = {"sine", "bubble", "constant", "linear"}


def _check_keys(section: Any, template: Any, path: str):
    if isinstance(template, dict) and isinstance(section, dict):
        for key in section:
            if key not in template:
                raise ConfigError(f"unknown config key {path}{key!r}")
            tmpl_val = template[key]
            # subsections with free-form content (source/diffusion/nn params,
            # explicit feature entries)
            if path + key in ("pde.source", "pde.diffusion", "surrogate.nn",
                              "atlas.features"):
                continue
            if isinstance(tmpl_val, dict) and isinstance(section[key], dict):
                _check_keys(section[key], tmpl_val, f"{path}{key}.")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate_config(raw: Optional[dict]) -> dict:
    """Merge a partial config over the defaults, rejecting unknown keys."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(raw, DEFAULT_CONFIG, "")
    cfg = _merge(DEFAULT_CONFIG, raw)

    if cfg["atlas"]["domain"] not in ("square", "disk"):
        raise ConfigError(f"unknown domain {cfg['atlas']['domain']!r}")
    if cfg["atlas"]["feature_catalog"] not in ("sine", "bubble"):
        raise ConfigError(f"unknown feature catalog {cfg['atlas']['feature_catalog']!r}")
    if cfg["atlas"]["nominal"] != "identity":
        raise ConfigError("only the identity nominal field is configurable")
    K = cfg["atlas"]["truncation_dim"]
    if not isinstance(K, int) or K < 1:
        raise ConfigError("truncation_dim must be a positive integer")
    feats = cfg["atlas"]["features"]
    if feats is not None:
        if not isinstance(feats, list) or len(feats) < K:
            raise ConfigError("atlas.features must list at least truncation_dim entries")
        for entry in feats:
            if not isinstance(entry, dict) or entry.get("kind") not in _FEATURE_KINDS:
                raise ConfigError(f"unknown feature entry {entry!r}")
    w = cfg["atlas"]["weights"]
    if w["c"] <= 0 or w["beta"] <= 1.0:
        raise ConfigError("weight rule needs c > 0 and beta > 1")
    scaling = cfg["atlas"]["scaling"]
    if scaling is not None:
        if scaling["s"] <= 0.5:
            raise ConfigError("cube-set scaling needs s > 1/2")
        if scaling["r"] != "auto" and not (
                isinstance(scaling["r"], (int, float)) and scaling["r"] > 0):
            raise ConfigError("scaling r must be 'auto' or a positive number")

    model = cfg["pde"]["model"]
    if model not in ("poisson", "diffusion_eulerian", "diffusion_lagrangian"):
        raise ConfigError(f"unknown PDE model {model!r}")
    src = cfg["pde"]["source"]
    if src.get("kind") not in _SOURCE_KINDS:
        raise ConfigError(f"unknown source kind {src.get('kind')!r}")
    if model != "poisson":
        diff = cfg["pde"]["diffusion"]
        if not diff or diff.get("kind") not in _DIFFUSION_KINDS:
            raise ConfigError("diffusion models need pde.diffusion with a known kind")

    if cfg["frame"]["decoder"] not in ("sine_h1", "sine_l2"):
        raise ConfigError(f"unknown decoder {cfg['frame']['decoder']!r}")
    if cfg["surrogate"]["kind"] not in ("spectral", "nn"):
        raise ConfigError(f"unknown surrogate kind {cfg['surrogate']['kind']!r}")
    m_out = cfg["surrogate"]["m_out"]
    if m_out != "auto" and not (isinstance(m_out, int) and m_out >= 1):
        raise ConfigError("surrogate.m_out must be 'auto' or a positive integer")

    b = cfg["bench"]
    sched = b["n_schedule"]
    if (not isinstance(sched, list) or len(sched) < 4
            or any(not isinstance(n, int) or n < 1 for n in sched)
            or sorted(sched) != sched or len(set(sched)) != len(sched)):
        raise ConfigError("bench.n_schedule must be a strictly increasing int list "
                          "with at least 4 entries (rate fits need 4 points)")
    for key in ("h", "h_coarse", "fd_h"):
        if not (0 < b[key] <= 0.5):
            raise ConfigError(f"bench.{key} must lie in (0, 1/2]")
    if b["n_sup"] < 2 or b["n_mc"] < 1 or b["n_mc"] > b["n_sup"]:
        raise ConfigError("need 1 <= n_mc <= n_sup and n_sup >= 2")
    if not isinstance(b["n_probe"], int) or b["n_probe"] < 1:
        raise ConfigError("bench.n_probe must be a positive integer")
    if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
        raise ConfigError("jobs must be a positive integer")
    return cfg


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return validate_config({})
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return validate_config(raw)


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``--set a.b.c=value`` overrides and re-validate."""
    plain = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw_val = item.partition("=")
        try:
            val = json.loads(raw_val)
        except json.JSONDecodeError:
            val = raw_val
        node = plain
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = val
    return validate_config(plain)


# ---------------------------------------------------------------------------
# object builders
# ---------------------------------------------------------------------------

def _feature_from_entry(entry: dict):
    kind = entry["kind"]
    if kind == "sine":
        return SineFeature(entry.get("k1", 1), entry.get("k2", 1),
                           entry.get("axis", 0))
    if kind == "bubble":
        return PolyBubbleFeature(entry.get("p1", 1), entry.get("p2", 0),
                                 entry.get("axis", 0))
    if kind == "constant":
        return ConstantFeature(entry.get("vec", (1.0, 0.0)))
    return LinearFeature(entry.get("matrix", ((1.0, 0.0), (0.0, 1.0))))


def build_base_atlas(cfg: dict) -> ShapeAtlas:
    a = cfg["atlas"]
    K = a["truncation_dim"]
    if a["features"] is not None:
        features = [_feature_from_entry(e) for e in a["features"]]
    else:
        catalog = sine_feature_catalog if a["feature_catalog"] == "sine" \
            else bubble_feature_catalog
        features = catalog(K)
    weights = WeightSequence.power(a["weights"]["c"], a["weights"]["beta"], K)
    return make_atlas(Domain(a["domain"]), IdentityField(), features, weights, K)


def build_effective_atlas(cfg: dict) -> tuple[ShapeAtlas, Optional[float]]:
    """Atlas of the benchmark family, with cube-set scaling applied.

    Returns (atlas, r) where r is the scaling factor used (None when scaling
    is disabled). r = "auto" solves r * sum(w_k^s * c1_k) = c_gamma_target.
    """
    base = build_base_atlas(cfg)
    scaling = cfg["atlas"]["scaling"]
    if scaling is None:
        return base, None
    s = float(scaling["s"])
    if scaling["r"] == "auto":
        w = base.active_weights
        norms = list(base.c1_norms)[: base.truncation_dim]
        denom = float(sum(wk ** s * ck for wk, ck in zip(w, norms)))
        r = float(scaling["c_gamma_target"]) / denom
    else:
        r = float(scaling["r"])
    eff = scaled_atlas(base, r, s)
    rep = gamma_sequence(eff)
    if not rep.valid:
        raise ConfigError(
            f"scaled atlas has c_gamma = {rep.c_gamma:.4g} >= 1; reduce r")
    return eff, r


def build_source(cfg: dict) -> pb.SourceField:
    src = cfg["pde"]["source"]
    kind = src["kind"]
    params = {k: v for k, v in src.items() if k != "kind"}
    if kind == "constant":
        return pb.ConstantSource(**params)
    if kind == "trig":
        return pb.TrigSource(**params)
    return pb.ManufacturedSineSource()


def build_diffusion(cfg: dict) -> Optional[pb.DiffusionField]:
    diff = cfg["pde"]["diffusion"]
    if diff is None:
        return None
    kind = diff["kind"]
    params = {k: v for k, v in diff.items() if k != "kind"}
    frame = "lagrangian" if cfg["pde"]["model"] == "diffusion_lagrangian" \
        else "eulerian"
    if kind == "constant":
        return pb.ConstantDiffusion(params.get("value", 1.0), frame_of_reference=frame)
    if kind == "trig":
        return pb.TrigDiffusion(frame_of_reference=frame,
                                **{k: v for k, v in params.items() if k != "value"})
    regions = [tuple(r) for r in params.get("regions", [])]
    return pb.PiecewiseConstantDiffusion(regions, default=params.get("default", 1.0))


class _ProblemFactory:
    """Picklable (atlas, y) -> PulledBackProblem closure for one config."""

    def __init__(self, model: str, source: pb.SourceField,
                 diffusion: Optional[pb.DiffusionField]):
        self.model = model
        self.source = source
        self.diffusion = diffusion

    def __call__(self, atlas, y):
        if self.model == "poisson":
            return pb.pullback_poisson(atlas, y, self.source)
        if self.model == "diffusion_eulerian":
            return pb.pullback_diffusion_eulerian(atlas, y, self.diffusion, self.source)
        return pb.pullback_diffusion_lagrangian(atlas, y, self.diffusion, self.source)


def build_problem_factory(cfg: dict) -> _ProblemFactory:
    return _ProblemFactory(cfg["pde"]["model"], build_source(cfg),
                           build_diffusion(cfg))
