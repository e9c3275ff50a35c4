"""Draping loss terms and their weighted compositions.

Every term is implemented once, as a kernel returning its value and,
on request, its gradient with respect to the predicted vertex positions.
The public ``l_*`` functions and :func:`compose` call the same kernels as
:mod:`drapegeom.grad`, so values agree bit for bit between the two paths.

Discrete selections (body correspondences, KNN neighbourhoods) can be
frozen in a :class:`Snapshot`; anything else that branches (gates, argmin
choices, obtuse-triangle rules, clamps) is taken at the evaluation point
and treated as constant when differentiating.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .curvature import (
    COT_CLAMP,
    knn_neighborhoods,
    mean_curvature_normal,
    mean_curvature_vjp,
    rayleigh_curvature,
    rayleigh_vjp,
)
from .errors import (
    ConfigError,
    EmptyTwoRing,
    FaceCountMismatch,
    TopologyMismatch,
    VertexCountMismatch,
)
from .mesh import average_edge_length, face_cross, vertex_normals, ZERO_AREA_RTOL
from .spatial import CorrespondenceSet, PointIndex, nearest_correspondences

RQ_SCALES = (8, 16, 32)
RECIPES = ("P", "MC_TOT", "RQ_TOT", "MCRQ_TOT")
TERMS = ("vert", "pen", "norm", "bend", "rq", "mc")
_RECIPE_ALIASES = {"p": "P", "mc": "MC_TOT", "rq": "RQ_TOT", "mcrq": "MCRQ_TOT"}


@dataclass(frozen=True)
class LossWeights:
    """Loss weights and tolerances."""

    lambda_pen: float = 1.0
    lambda_norm: float = 0.3
    lambda_bend: float = 0.5
    lambda_p: float = 0.1
    lambda_mc: float = 10.0
    lambda_rq8: float = 500.0
    lambda_rq16: float = 50.0
    lambda_rq32: float = 10.0
    d_tol_cm: float = 0.05
    body_offset_fraction: float = 0.20
    mc_clamp_threshold: float | None = None

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None and f.name == "mc_clamp_threshold":
                continue
            if not isinstance(val, (int, float)) or isinstance(val, bool) or math.isnan(val):
                raise ConfigError(f"{f.name} must be a number, got {val!r}")
            if val < 0:
                raise ConfigError(f"{f.name} must be >= 0, got {val}")
        if self.body_offset_fraction > 1:
            raise ConfigError("body_offset_fraction must lie in [0, 1]")

    def lambda_rq(self, k):
        return {8: self.lambda_rq8, 16: self.lambda_rq16, 32: self.lambda_rq32}[k]

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_mapping(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown weight keys: {sorted(unknown)}")
        vals = {}
        for k, v in data.items():
            if k == "mc_clamp_threshold" and v is None:
                vals[k] = None
            elif isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{k} must be a number, got {v!r}")
            else:
                vals[k] = float(v)
        return cls(**vals)

    def replace(self, **changes):
        d = self.as_dict()
        d.update(changes)
        return LossWeights(**d)


def normalize_recipe(recipe):
    r = _RECIPE_ALIASES.get(str(recipe).lower(), str(recipe).upper())
    if r not in RECIPES:
        raise ConfigError(f"unknown recipe {recipe!r}; expected one of {RECIPES}")
    return r


@dataclass
class Snapshot:
    """Frozen discrete selections shared by a value and its gradient."""

    correspondences: CorrespondenceSet | None = None
    pred_neighbors: dict = field(default_factory=dict)
    gt_neighbors: dict = field(default_factory=dict)


def take_snapshot(pred, gt, body=None, ks=(), gt_neighbors=None):
    """Correspondences of ``pred`` onto ``body`` and KNN sets for each K in ``ks``.

    ``gt_neighbors`` may carry precomputed ground-truth neighbourhoods, which
    never change during a refinement.
    """
    snap = Snapshot()
    if body is not None:
        snap.correspondences = nearest_correspondences(pred, body)
    if ks:
        pidx = PointIndex(pred.vertices)
        for k in ks:
            snap.pred_neighbors[k] = knn_neighborhoods(pred, k, index=pidx)
        if gt_neighbors:
            snap.gt_neighbors.update(gt_neighbors)
        missing = [k for k in ks if k not in snap.gt_neighbors]
        if missing:
            gidx = PointIndex(gt.vertices)
            for k in missing:
                snap.gt_neighbors[k] = knn_neighborhoods(gt, k, index=gidx)
    return snap


@dataclass
class TermResult:
    value: float
    grad: np.ndarray | None = None
    counters: dict = field(default_factory=dict)


def _check_vertices(pred, gt):
    if pred.n_vertices != gt.n_vertices:
        raise VertexCountMismatch(f"pred has {pred.n_vertices} vertices, gt has {gt.n_vertices}")


def _check_faces(pred, gt):
    if pred.n_faces != gt.n_faces:
        raise FaceCountMismatch(f"pred has {pred.n_faces} faces, gt has {gt.n_faces}")


def _check_topology(pred, gt):
    _check_vertices(pred, gt)
    _check_faces(pred, gt)
    if not pred.same_topology(gt):
        raise TopologyMismatch("pred and gt have different face lists")


def vert_term(pred, gt, with_grad=False):
    _check_vertices(pred, gt)
    d = pred.vertices - gt.vertices
    n = pred.n_vertices
    value = float(np.sum(np.einsum("ij,ij->i", d, d)) / n)
    grad = (2.0 / n) * d if with_grad else None
    return TermResult(value, grad)


def offset_body(body, fraction):
    """Body vertices pushed out along their normals by ``fraction`` of the mean edge length."""
    normals = vertex_normals(body)
    shift = fraction * average_edge_length(body)
    return body.vertices + shift * normals, normals


def pen_term(pred, gt, body, weights, correspondences=None, with_grad=False, d_tol=None,
             body_frame=None):
    """Gated hinge penalty on garment vertices lying inside their matched body tangent plane."""
    _check_vertices(pred, gt)
    if correspondences is None:
        correspondences = nearest_correspondences(pred, body)
    if body_frame is None:
        body_frame = offset_body(body, weights.body_offset_fraction)
    anchors, normals = body_frame
    tol = weights.d_tol_cm if d_tol is None else d_tol
    bi = correspondences.body_index
    n_b = normals[bi]
    signed = np.einsum("ij,ij->i", n_b, pred.vertices - anchors[bi])
    gate = np.linalg.norm(pred.vertices - gt.vertices, axis=1) < tol
    active = gate & (signed < 0)
    n = pred.n_vertices
    value = float(np.sum(np.where(active, -signed, 0.0)) / n)
    grad = None
    if with_grad:
        grad = np.where(active[:, None], -n_b / n, 0.0)
    return TermResult(value, grad, {"pen_active": int(active.sum()), "pen_gated": int(gate.sum())})


def _face_normals_flagged(mesh):
    c = face_cross(mesh)
    norm = np.linalg.norm(c, axis=1)
    tol = ZERO_AREA_RTOL * average_edge_length(mesh) ** 2
    ok = 0.5 * norm > tol
    unit = np.zeros_like(c)
    unit[ok] = c[ok] / norm[ok, None]
    return c, norm, unit, ok


def norm_term(pred, gt, with_grad=False):
    """Mean of ``(1 - n_gt . n_pred)^2`` over faces with non-zero area in both meshes."""
    _check_faces(pred, gt)
    cp, lp, np_, okp = _face_normals_flagged(pred)
    _, _, ng, okg = _face_normals_flagged(gt)
    keep = okp & okg
    nf = int(keep.sum())
    counters = {"skipped_faces": int((~keep).sum())}
    if nf == 0:
        return TermResult(0.0, np.zeros_like(pred.vertices) if with_grad else None, counters)
    # 1 - a.b written as |a - b|^2 / 2, exactly 0 for identical normals
    resid = np.where(keep, 0.5 * np.sum((ng - np_) ** 2, axis=1), 0.0)
    value = float(np.sum(resid**2) / nf)
    grad = None
    if with_grad:
        # dL/dn_pred, then through n = c/|c|, then through c = e1 x e2
        dn = (-2.0 / nf) * resid[:, None] * ng
        lp_safe = np.where(keep, lp, 1.0)
        dc = (dn - np.einsum("ij,ij->i", dn, np_)[:, None] * np_) / lp_safe[:, None]
        dc[~keep] = 0.0
        v, f = pred.vertices, pred.faces
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        g1 = np.cross(e2, dc)
        g2 = np.cross(dc, e1)
        grad = np.zeros_like(v)
        for a in range(3):
            grad[:, a] += np.bincount(f[:, 1], weights=g1[:, a], minlength=len(v))
            grad[:, a] += np.bincount(f[:, 2], weights=g2[:, a], minlength=len(v))
            grad[:, a] -= np.bincount(f[:, 0], weights=g1[:, a] + g2[:, a], minlength=len(v))
    return TermResult(value, grad, counters)


def bend_term(pred, gt, with_grad=False):
    """Mean absolute change of distances between vertices two edges apart."""
    _check_topology(pred, gt)
    pairs = gt.topology.two_edge_pairs
    if len(pairs) == 0:
        raise EmptyTwoRing("mesh has no vertex pairs at graph distance two")
    i, k = pairs[:, 0], pairs[:, 1]
    dp_vec = pred.vertices[i] - pred.vertices[k]
    dp = np.linalg.norm(dp_vec, axis=1)
    dg = np.linalg.norm(gt.vertices[i] - gt.vertices[k], axis=1)
    diff = dp - dg
    m = len(pairs)
    value = float(np.sum(np.abs(diff)) / m)
    grad = None
    if with_grad:
        dp_safe = np.where(dp > 0, dp, 1.0)
        w = (np.sign(diff) / m / dp_safe)[:, None] * dp_vec
        w[dp == 0] = 0.0
        grad = np.zeros_like(pred.vertices)
        n = pred.n_vertices
        for a in range(3):
            grad[:, a] += np.bincount(i, weights=w[:, a], minlength=n)
            grad[:, a] -= np.bincount(k, weights=w[:, a], minlength=n)
    return TermResult(value, grad)


def rq_term(pred, gt, k, pred_neighbors=None, gt_neighbors=None, with_grad=False):
    """Mean squared difference of (RQ_min, RQ_max) between pred and gt at scale K."""
    _check_vertices(pred, gt)
    fp = rayleigh_curvature(pred, k, neighbors=pred_neighbors)
    fg = rayleigh_curvature(gt, k, neighbors=gt_neighbors)
    keep = ~(fp.degenerate | fg.degenerate)
    n = int(keep.sum())
    counters = {f"rq{k}_degenerate": int((~keep).sum())}
    if n == 0:
        return TermResult(0.0, np.zeros_like(pred.vertices) if with_grad else None, counters)
    d = np.where(keep[:, None], fp.values - fg.values, 0.0)
    value = float(np.sum(d[:, 0] ** 2 + d[:, 1] ** 2) / n)
    grad = None
    if with_grad:
        nbr = fp.extras["neighbors"]
        grad = rayleigh_vjp(pred, nbr, fp.extras["arg_min"], 2.0 * d[:, 0] / n)
        grad += rayleigh_vjp(pred, nbr, fp.extras["arg_max"], 2.0 * d[:, 1] / n)
    return TermResult(value, grad, counters)


def mc_term(pred, gt, threshold=None, with_grad=False, clamp=COT_CLAMP):
    """Mean squared difference of mean curvature normals over interior vertices.

    Per-vertex terms above ``threshold`` are dropped and counted.
    """
    _check_topology(pred, gt)
    fp = mean_curvature_normal(pred, clamp)
    fg = mean_curvature_normal(gt, clamp)
    interior = fp.valid & fg.valid & pred.interior_vertices
    n = int(interior.sum())
    d = np.where(interior[:, None], fp.values - fg.values, 0.0)
    per = np.einsum("ij,ij->i", d, d)
    dropped = np.zeros_like(interior)
    if threshold is not None:
        dropped = interior & (per > threshold)
    kept = interior & ~dropped
    counters = {
        "cot_clamps": fp.clamp_events + fg.clamp_events,
        "mc_dropped": int(dropped.sum()),
    }
    if n == 0:
        return TermResult(0.0, np.zeros_like(pred.vertices) if with_grad else None, counters)
    value = float(np.sum(np.where(kept, per, 0.0)) / n)
    grad = None
    if with_grad:
        r = np.where(kept[:, None], (2.0 / n) * d, 0.0)
        grad = mean_curvature_vjp(pred, r, clamp)
    return TermResult(value, grad, counters)


def l_vert(pred, gt):
    return vert_term(pred, gt).value


def l_pen(pred, gt, body, weights=None, correspondences=None):
    return pen_term(pred, gt, body, weights or LossWeights(), correspondences).value


def l_norm(pred, gt):
    return norm_term(pred, gt).value


def l_bend(pred, gt):
    return bend_term(pred, gt).value


def l_rq(pred, gt, k, pred_neighbors=None, gt_neighbors=None):
    return rq_term(pred, gt, k, pred_neighbors, gt_neighbors).value


def l_mc(pred, gt, threshold=None):
    return mc_term(pred, gt, threshold).value


def recipe_weights(recipe, weights, with_body=True):
    """Effective multiplier of every term in a recipe, in evaluation order."""
    recipe = normalize_recipe(recipe)
    scale = 1.0 if recipe == "P" else weights.lambda_p
    out = {"vert": scale}
    if with_body:
        out["pen"] = scale * weights.lambda_pen
    out["norm"] = scale * weights.lambda_norm
    out["bend"] = scale * weights.lambda_bend
    if recipe in ("MC_TOT", "MCRQ_TOT"):
        out["mc"] = weights.lambda_mc
    if recipe in ("RQ_TOT", "MCRQ_TOT"):
        for k in RQ_SCALES:
            out[f"rq{k}"] = weights.lambda_rq(k)
    return out


@dataclass
class LossReport:
    """Per-term values, the multipliers applied to them and the weighted total."""

    recipe: str
    per_term: dict
    applied_weights: dict
    total: float
    clamp_events: int = 0
    counters: dict = field(default_factory=dict)
    correspondences: CorrespondenceSet | None = None

    def as_dict(self):
        return {
            "recipe": self.recipe,
            "per_term": dict(self.per_term),
            "applied_weights": dict(self.applied_weights),
            "total": self.total,
            "clamp_events": self.clamp_events,
            "counters": dict(self.counters),
        }


def evaluate_term(name, pred, gt, body, weights, snapshot=None, with_grad=False,
                  body_frame=None, d_tol=None):
    """Dispatch one term by name (``vert``, ``pen``, ``norm``, ``bend``, ``mc``, ``rqK``)."""
    snapshot = snapshot or Snapshot()
    if name == "vert":
        return vert_term(pred, gt, with_grad)
    if name == "pen":
        if body is None:
            raise ValueError("the pen term needs a body mesh")
        return pen_term(pred, gt, body, weights, snapshot.correspondences, with_grad,
                        d_tol=d_tol, body_frame=body_frame)
    if name == "norm":
        return norm_term(pred, gt, with_grad)
    if name == "bend":
        return bend_term(pred, gt, with_grad)
    if name == "mc":
        return mc_term(pred, gt, weights.mc_clamp_threshold, with_grad)
    if name.startswith("rq"):
        k = int(name[2:])
        return rq_term(pred, gt, k, snapshot.pred_neighbors.get(k), snapshot.gt_neighbors.get(k),
                       with_grad)
    raise ValueError(f"unknown loss term {name!r}")


def evaluate(pred, gt, body, weights, recipe, snapshot=None, with_grad=False, body_frame=None,
             term_weights=None, d_tol=None):
    """Shared evaluation path for :func:`compose` and :func:`drapegeom.grad.grad_compose`.

    ``term_weights`` overrides the recipe's multipliers (used by the
    standalone penetration solver). Returns ``(LossReport, grad or None)``.
    """
    if term_weights is None:
        recipe = normalize_recipe(recipe)
        term_weights = recipe_weights(recipe, weights, with_body=body is not None)
    if snapshot is None:
        ks = tuple(int(t[2:]) for t in term_weights if t.startswith("rq"))
        snapshot = take_snapshot(pred, gt, body if "pen" in term_weights else None, ks)
    per_term = {}
    counters = {}
    grad = np.zeros_like(pred.vertices) if with_grad else None
    for name, w in term_weights.items():
        res = evaluate_term(name, pred, gt, body, weights, snapshot, with_grad, body_frame, d_tol)
        per_term[name] = res.value
        for key, val in res.counters.items():
            counters[key] = counters.get(key, 0) + val
        if with_grad and w != 0:
            grad += w * res.grad
    total = 0.0
    for name, w in term_weights.items():
        total += w * per_term[name]
    clamp_events = counters.get("cot_clamps", 0) + counters.get("mc_dropped", 0)
    report = LossReport(str(recipe), per_term, dict(term_weights), float(total), clamp_events,
                        counters, snapshot.correspondences)
    return report, grad


def compose(pred, gt, body=None, weights=None, recipe="P", snapshot=None):
    """Evaluate a loss recipe (``P``, ``MC_TOT``, ``RQ_TOT`` or ``MCRQ_TOT``).

    Without a body mesh the interpenetration term is left out.
    """
    report, _ = evaluate(pred, gt, body, weights or LossWeights(), recipe, snapshot)
    return report
