"""Command-line interface: inspect, solve, fit, eval, bench, report.

Exit codes: 0 success, 1 internal numerical failure, 2 user/config error.
Every command is deterministic given (config, seed); the SHAPEOP_SEED
environment variable overrides the configured seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .bench import (
    CoefficientOracle,
    evaluate_oracle_batch,
    fit_rate,
    read_curve_csv,
    run_experiment,
    _fit_best_split,
    _plot_curve_svg,
)
from .config import (
    apply_overrides,
    build_effective_atlas,
    build_problem_factory,
    load_config,
)
from .errors import ConfigError, ShapeOpError
from .fem import (
    assemble_and_solve,
    build_mesh,
    h1_error_against,
    h1_seminorm,
    l2_norm,
    write_solution_csv,
)
from .shape_param import ParamPoint, check_uniformity, gamma_sequence, sample_cube_batch
from .surrogate_spectral import load_surrogate, save_surrogate

__all__ = ["main"]


def _load_cfg(args) -> dict:
    cfg = load_config(getattr(args, "config", None))
    overrides = getattr(args, "set", None) or []
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    env_seed = os.environ.get("SHAPEOP_SEED")
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"SHAPEOP_SEED must be an integer, got {env_seed!r}") from exc
    if getattr(args, "jobs", None):
        cfg["jobs"] = args.jobs
    return cfg


def _out_dir(cfg, args) -> Path:
    out = Path(getattr(args, "out", None) or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_y(text: str, K: int) -> ParamPoint:
    try:
        coords = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse parameter point {text!r}: {exc}") from exc
    if coords.size != K:
        raise ConfigError(f"parameter point has {coords.size} coordinates, atlas needs {K}")
    if np.any(np.abs(coords) > 1.0):
        raise ConfigError("parameter coordinates must lie in [-1, 1]")
    return ParamPoint(coords)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_inspect(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg, args)
    atlas, r = build_effective_atlas(cfg)
    rep = gamma_sequence(atlas)
    w = atlas.weights.extend(len(atlas.features))
    path = out / "atlas_report.csv"
    with open(path, "w") as fh:
        fh.write("k,w_k,c1_norm,gamma_k\n")
        for k, (wk, ck, gk) in enumerate(zip(w, atlas.c1_norms, rep.gamma), start=1):
            fh.write(f"{k},{float(wk)!r},{float(ck)!r},{float(gk)!r}\n")
    catalog = "custom" if cfg["atlas"]["features"] else cfg["atlas"]["feature_catalog"]
    print(f"atlas: domain={atlas.reference_domain.name} K={atlas.truncation_dim} "
          f"catalog={catalog}" + (f" r={r:.6g}" if r is not None else ""))
    print(f"c_gamma = {rep.c_gamma:.6g} ({'valid' if rep.valid else 'INVALID: >= 1'})")
    print(f"wrote {path}")
    if not rep.valid:
        print("atlas rejected: c_gamma >= 1 gives no invertibility guarantee",
              file=sys.stderr)
        return 2
    urep = check_uniformity(atlas)
    print(f"sigma_min = {urep.sigma_min:.6g}, sigma_max = {urep.sigma_max:.6g}")
    print(f"C1 norm of V_y <= {urep.v_c1_max:.6g}, "
          f"inverse C1 estimate <= {urep.inverse_c1_estimate:.6g}")
    return 0


def cmd_solve(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg, args)
    atlas, _ = build_effective_atlas(cfg)
    y = _parse_y(args.y, atlas.truncation_dim)
    h = args.h or cfg["bench"]["h"]
    mesh = build_mesh(atlas.reference_domain, h)
    problem = build_problem_factory(cfg)(atlas, y)
    sol = assemble_and_solve(mesh, problem)
    path = out / "solution.csv"
    write_solution_csv(sol, str(path))
    print(f"solved {cfg['pde']['model']} at h = {h:g} "
          f"({mesh.n_nodes} nodes, {len(mesh.interior_nodes)} dofs)")
    print(f"H1 seminorm = {h1_seminorm(sol)!r}")
    print(f"L2 norm     = {l2_norm(sol)!r}")
    if (cfg["pde"]["source"]["kind"] == "manufactured_sine"
            and not np.any(y.coords) and cfg["pde"]["model"] == "poisson"):
        def grad_exact(p):
            g = np.empty(np.asarray(p).shape)
            g[..., 0] = np.pi * np.cos(np.pi * p[..., 0]) * np.sin(np.pi * p[..., 1])
            g[..., 1] = np.pi * np.sin(np.pi * p[..., 0]) * np.cos(np.pi * p[..., 1])
            return g
        print(f"manufactured H1 error = {h1_error_against(sol, grad_exact)!r}")
    print(f"wrote {path}")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_cfg(args)
    atlas, _ = build_effective_atlas(cfg)
    factory = build_problem_factory(cfg)
    m_ref = int(cfg["frame"]["m_ref"])
    oracle = CoefficientOracle(atlas, factory, cfg["bench"]["h"],
                               decoder=cfg["frame"]["decoder"], m_ref=m_ref)
    K = atlas.truncation_dim
    gamma = gamma_sequence(atlas).gamma[:K]
    probe_ys = sample_cube_batch(cfg["seed"] + 2, K, int(cfg["bench"]["n_probe"]))
    probe_vals = evaluate_oracle_batch(oracle, probe_ys, 1)
    budget = int(cfg["surrogate"]["budget"])
    surr = _fit_best_split(budget, gamma, oracle, {}, probe_ys, probe_vals,
                           m_ref, cfg["surrogate"]["m_out"],
                           oracle.output_descriptor)
    if args.out:
        path = Path(args.out)
    else:
        path = Path(cfg["output_dir"]) / "surrogate.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_surrogate(surr, str(path))
    print(f"fitted spectral surrogate: budget N = {budget}, "
          f"|index set| = {len(surr.index_set)}, m_out = {surr.m_out}, "
          f"oracle solves = {len(surr.index_set)}")
    print(f"wrote {path}")
    return 0


def cmd_eval(args) -> int:
    surr = load_surrogate(args.surrogate)
    try:
        coords = np.array([float(v) for v in args.y.split(",")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse parameter point {args.y!r}") from exc
    if coords.size != surr.dim:
        raise ConfigError(
            f"parameter point has {coords.size} coordinates, surrogate needs {surr.dim}")
    if np.any(np.abs(coords) > 1.0):
        raise ConfigError("parameter coordinates must lie in [-1, 1]")
    vals = surr.evaluate(coords)
    print("index,value")
    for i, v in enumerate(vals):
        print(f"{i},{float(v)!r}")
    print(f"# coefficient norm = {float(np.linalg.norm(vals))!r}", file=sys.stderr)
    if args.out:
        from .frames import write_coeffs_csv
        write_coeffs_csv(vals, args.out)
    return 0


def cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    bundle = run_experiment(cfg, output_dir=getattr(args, "out", None),
                            jobs=cfg["jobs"])
    s = bundle.summary
    print(f"output: {bundle.output_dir}")
    print(f"c_gamma = {s['atlas']['c_gamma']:.4g}, "
          f"sigma = ({s['uniformity']['sigma_min']:.4g}, "
          f"{s['uniformity']['sigma_max']:.4g})")
    print(f"t_eff = {s['t_eff']:.4g}, floor = {s['floor']['value']:.4g}")
    for p in bundle.curve.points:
        print(f"N = {p.N:4d}: sup = {p.error_sup:.6g}, ms = {p.error_ms:.6g}, "
              f"oracle solves = {p.oracle_evals}")
    for kind, rate in (("sup", bundle.sup_rate), ("ms", bundle.ms_rate)):
        verdict = "" if rate.predicted is None else (
            f" vs predicted {rate.predicted:.3g} - {rate.delta:g} "
            f"-> {'OK' if rate.satisfied else 'MISS'}")
        print(f"{kind} rate = {rate.rate:.3g} (points {rate.points_used}){verdict}")
    print(f"derivative ratio spread = {bundle.decay.ratio_spread:.3g}, "
          f"rho = {bundle.decay.max_ratio:.3g}")
    print("files: " + ", ".join(bundle.files))
    return 0


def cmd_report(args) -> int:
    d = Path(args.dir)
    curve_path = d / "curve_spectral.csv"
    if not curve_path.exists():
        raise ConfigError(f"no curve_spectral.csv in {d}")
    curve = read_curve_csv(str(curve_path))
    floor = 0.0
    predicted = None
    summary_path = d / "summary.json"
    if summary_path.exists():
        import json
        with open(summary_path) as fh:
            s = json.load(fh)
        floor = s.get("floor", {}).get("value", 0.0)
        t_eff = s.get("t_eff")
        scaling = s.get("config", {}).get("atlas", {}).get("scaling")
        if t_eff is not None and scaling:
            predicted = min(scaling["s"] - 1.0, t_eff)
    _plot_curve_svg(curve, str(d / "curve_spectral.svg"), "spectral surrogate error")
    for kind in ("sup", "ms"):
        rate = fit_rate(curve, kind, predicted=predicted, floor=floor)
        verdict = "" if rate.predicted is None else (
            f" vs predicted {rate.predicted:.3g} - {rate.delta:g} "
            f"-> {'OK' if rate.satisfied else 'MISS'}")
        print(f"{kind} rate = {rate.rate:.3g} (points {rate.points_used}){verdict}")
    print(f"regenerated {d / 'curve_spectral.svg'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="path to the JSON run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted path, JSON value)")
    p.add_argument("--out", help="output directory or file")
    p.add_argument("--jobs", type=int, help="worker processes for oracle solves")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapeop",
        description="shape-to-solution operator surrogates on a reference domain")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="atlas report: gamma sequence, uniformity")
    _add_common(p)
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("solve", help="single pulled-back FEM solve at a parameter point")
    _add_common(p)
    p.add_argument("--y", required=True, help="comma-separated parameter coordinates")
    p.add_argument("--h", type=float, help="mesh size override")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("fit", help="fit and serialize a spectral surrogate")
    _add_common(p)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("eval", help="evaluate a serialized surrogate at a point")
    p.add_argument("--surrogate", required=True, help="surrogate JSON path")
    p.add_argument("--y", required=True, help="comma-separated parameter coordinates")
    p.add_argument("--out", help="optional coefficient CSV output path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="full benchmark: curves, rates, report bundle")
    _add_common(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("report", help="re-render plots and rates from a bench directory")
    p.add_argument("--dir", required=True, help="bench output directory")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ShapeOpError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
