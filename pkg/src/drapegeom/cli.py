"""Command-line entry point: ``drapegeom <subcommand> ...``.

Exit status is 0 on success, 1 when inputs fail validation (or a gradient
check exceeds its tolerance) and 2 on I/O or parse errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .config import load_config, read_mapping
from .curvature import (
    eigen_curvature,
    gaussian_curvature,
    mean_curvature_normal,
    rayleigh_curvature,
    uniform_laplacian_curvature,
)
from .errors import DrapeGeomError, NonFiniteLoss, ParseError
from .grad import finite_difference_check
from .io import load_mesh, save_mesh, write_field_csv
from .losses import LossWeights, compose
from .metrics import evaluate as evaluate_metrics
from .refine import refine
from .scenes import generate

logger = logging.getLogger("drapegeom")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _report(command, config, result, counters=None):
    return {
        "tool": "drapegeom",
        "version": __version__,
        "command": command,
        "config": config,
        "result": result,
        "counters": counters or {},
    }


def _write_json(path, payload):
    text = json.dumps(_jsonable(payload), indent=2)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _png_beside(path, suffix=""):
    stem = os.path.splitext(path)[0]
    return f"{stem}{suffix}.png"


def _weights_from_file(path):
    data = read_mapping(path)
    if "weights" in data and isinstance(data["weights"], dict):
        data = data["weights"]
    return LossWeights.from_mapping(data)


# ---------------------------------------------------------------------------
# subcommands


CURVATURE_METRICS = ("gaussian", "mean", "umc", "eigen", "rq")


def _curvature_fields(mesh, metric, k):
    if metric == "gaussian":
        f = gaussian_curvature(mesh)
        fields = {"kgc": f.values}
        main = "kgc"
    elif metric in ("mean", "umc"):
        f = mean_curvature_normal(mesh) if metric == "mean" else uniform_laplacian_curvature(mesh)
        name = "kmc" if metric == "mean" else "kumc"
        fields = {f"{name}_{c}": f.values[:, i] for i, c in enumerate("xyz")}
        fields[f"{name}_norm"] = np.linalg.norm(f.values, axis=1)
        main = f"{name}_norm"
    elif metric == "eigen":
        f = eigen_curvature(mesh, k)
        fields = {f"sigma_{i + 1}": f.values[:, i] for i in range(3)}
        main = "sigma_1"
    else:
        f = rayleigh_curvature(mesh, k)
        fields = {"rq_min": f.values[:, 0], "rq_max": f.values[:, 1]}
        main = "rq_min"
    fields["valid"] = f.valid.astype(np.float64)
    return f, fields, main


def cmd_curvature(args):
    mesh = load_mesh(args.mesh)
    f, fields, main = _curvature_fields(mesh, args.metric, args.k)
    if args.out.lower().endswith(".csv"):
        write_field_csv(args.out, mesh, fields)
    else:
        save_mesh(args.out, mesh, fields=fields, float64=args.float64, color_field=main)
    valid = f.valid
    scalar = f.scalar()
    summary = {
        "metric": args.metric,
        "k": f.k,
        "n_vertices": mesh.n_vertices,
        "valid_vertices": int(valid.sum()),
        "mean": f.mean(),
        "min": float(scalar[valid].min()) if valid.any() else None,
        "max": float(scalar[valid].max()) if valid.any() else None,
    }
    counters = {"clamp_events": f.clamp_events, "boundary": int(f.boundary.sum()),
                "degenerate": int(f.degenerate.sum())}
    if args.plot:
        from .plotting import plot_vertex_field
        shown = np.where(valid, fields[main], np.nan)
        summary["figure"] = plot_vertex_field(mesh, shown, _png_beside(args.out), title=args.metric,
                                              label=main)
    _write_json(args.json, _report("curvature", {"metric": args.metric, "k": args.k}, summary, counters))
    return EXIT_OK


def cmd_loss(args):
    pred = load_mesh(args.pred)
    gt = load_mesh(args.gt)
    body = load_mesh(args.body) if args.body else None
    weights = _weights_from_file(args.weights) if args.weights else LossWeights()
    report = compose(pred, gt, body, weights, args.recipe)
    cfg = {"recipe": report.recipe, "weights": weights.as_dict(), "body": bool(body)}
    res = report.as_dict()
    counters = dict(res.pop("counters"))
    counters["clamp_events"] = res.pop("clamp_events")
    _write_json(args.json, _report("loss", cfg, res, counters))
    return EXIT_OK


def _write_curve_csv(path, ev):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "threshold", "fraction_below"])
        for kind, c in (("distance_cm", ev.precision_curve), ("angle_deg", ev.angle_curve)):
            for th, fr in c:
                w.writerow([kind, repr(float(th)), repr(float(fr))])


def cmd_metrics(args):
    pred = load_mesh(args.pred)
    gt = load_mesh(args.gt)
    body = load_mesh(args.body) if args.body else None
    ev = evaluate_metrics(pred, gt, body)
    res = ev.as_dict()
    if args.curve:
        _write_curve_csv(args.curve, ev)
        if args.plot:
            from .plotting import plot_precision_curves
            res["figures"] = [
                plot_precision_curves({"pred": ev.precision_curve}, _png_beside(args.curve, "_distance")),
                plot_precision_curves({"pred": ev.angle_curve}, _png_beside(args.curve, "_angle"),
                                      xlabel="angle threshold (deg)"),
            ]
    _write_json(args.json, _report("metrics", {"body": bool(body)}, res))
    return EXIT_OK


def cmd_gradcheck(args):
    weights = _weights_from_file(args.weights) if args.weights else LossWeights()
    res = finite_difference_check(args.term, h=args.h, trials=args.trials, seed=args.seed,
                                  weights=weights)
    ok = res.passed(args.tol)
    out = {"target": res.target, "max_rel_error": res.max_rel_error, "tolerance": args.tol,
           "passed": ok, "trial_errors": res.trial_errors}
    cfg = {"term": args.term, "trials": args.trials, "h": args.h, "seed": args.seed,
           "weights": weights.as_dict()}
    _write_json(args.json, _report("gradcheck", cfg, out, {"resamples": res.resamples}))
    print(f"gradcheck {args.term}: max rel. error {res.max_rel_error:.3e} "
          f"({'ok' if ok else 'FAIL'}, tol {args.tol:g})", file=sys.stderr)
    return EXIT_OK if ok else EXIT_INVALID


def _write_trace_csv(path, trace):
    names = list(trace[0][1].per_term) if trace else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "total"] + names + ["clamp_events"])
        for step, rep in trace:
            w.writerow([step, repr(rep.total)] + [repr(rep.per_term[n]) for n in names]
                       + [rep.clamp_events])


def cmd_refine(args):
    init = load_mesh(args.init)
    target = load_mesh(args.target)
    body = load_mesh(args.body) if args.body else None
    overrides = {"refine": {}}
    if args.recipe is not None:
        overrides["refine"]["recipe"] = args.recipe
    if args.steps is not None:
        overrides["refine"]["steps"] = args.steps
    cfg = load_config(args.config, overrides)
    status = EXIT_OK
    try:
        result = refine(init, target, body, cfg.refine)
    except NonFiniteLoss as exc:
        logger.error("%s", exc)
        result = exc.result
        status = EXIT_INVALID
    save_mesh(args.out, result.final_mesh)
    final = result.trace[-1][1] if result.trace else None
    res = {
        "final": final.as_dict() if final else None,
        "step_size": result.step_size,
        "accepted_steps": result.accepted_steps,
        "rejected_steps": result.rejected_steps,
        "refreshes": len(result.refreshes),
    }
    if args.trace:
        _write_trace_csv(args.trace, result.trace)
        if args.plot and result.trace:
            from .plotting import plot_trace
            res["figure"] = plot_trace(result.trace, _png_beside(args.trace), title=cfg.refine.recipe)
    counters = {"clamp_events": result.clamp_events, "degenerate_events": result.degenerate_events}
    if final:
        counters.update(final.counters)
    _write_json(args.json, _report("refine", cfg.as_dict(), res, counters))
    return status


def cmd_gen(args):
    spec = read_mapping(args.spec)
    out = generate(spec)
    if isinstance(out, tuple):
        body, cloth = out
        stem, ext = os.path.splitext(args.out)
        body_out = args.body_out or f"{stem}_body{ext}"
        save_mesh(args.out, cloth, float64=args.float64)
        save_mesh(body_out, body, float64=args.float64)
        res = {"cloth": args.out, "body": body_out, "n_vertices": [cloth.n_vertices, body.n_vertices]}
    else:
        save_mesh(args.out, out, float64=args.float64)
        res = {"mesh": args.out, "n_vertices": out.n_vertices, "n_faces": out.n_faces}
    _write_json(args.json, _report("gen", spec, res))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="drapegeom", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, json_default=None):
        sp.add_argument("--json", default=json_default, help="JSON report path ('-' for stdout)")

    s = sub.add_parser("curvature", help="per-vertex curvature field")
    s.add_argument("mesh")
    s.add_argument("--metric", choices=CURVATURE_METRICS, required=True)
    s.add_argument("--k", type=int, default=16, help="neighbourhood size for eigen/rq")
    s.add_argument("--out", required=True, help="PLY or CSV output")
    s.add_argument("--float64", action="store_true", help="store PLY values as double")
    s.add_argument("--plot", action="store_true", help="also render a PNG heatmap next to --out")
    common(s)
    s.set_defaults(func=cmd_curvature)

    s = sub.add_parser("loss", help="evaluate a loss recipe")
    s.add_argument("pred")
    s.add_argument("gt")
    s.add_argument("--body")
    s.add_argument("--recipe", default="p")
    s.add_argument("--weights", help="TOML/JSON file with loss weights")
    common(s, "-")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("metrics", help="evaluation metrics and precision curves")
    s.add_argument("pred")
    s.add_argument("gt")
    s.add_argument("--body")
    s.add_argument("--curve", help="CSV path for precision curves")
    s.add_argument("--plot", action="store_true", help="also render PNG curves next to --curve")
    common(s, "-")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("gradcheck", help="finite-difference gradient check")
    s.add_argument("--term", required=True)
    s.add_argument("--trials", type=int, default=30)
    s.add_argument("--h", type=float, default=1e-6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--weights")
    common(s)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("refine", help="optimize vertex translations under a recipe")
    s.add_argument("init")
    s.add_argument("target")
    s.add_argument("--body")
    s.add_argument("--recipe")
    s.add_argument("--steps", type=int)
    s.add_argument("--config", help="TOML/JSON config (a previous report's JSON works too)")
    s.add_argument("--out", required=True)
    s.add_argument("--trace", help="CSV path for the loss trace")
    s.add_argument("--plot", action="store_true", help="also render a PNG trace next to --trace")
    common(s)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("gen", help="generate a synthetic scene")
    s.add_argument("--spec", required=True, help="TOML/JSON scene spec")
    s.add_argument("--out", required=True)
    s.add_argument("--body-out", help="body mesh path for capsuleDrape")
    s.add_argument("--float64", action="store_true")
    common(s)
    s.set_defaults(func=cmd_gen)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DrapeGeomError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
