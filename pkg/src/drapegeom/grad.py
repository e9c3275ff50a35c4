"""Analytic loss gradients and a central-difference checker.

Gradients are taken under a frozen :class:`~drapegeom.losses.Snapshot`
(correspondences and KNN sets fixed) with every other discrete choice held
at the branch active at the evaluation point, which is how automatic
differentiation through index selection behaves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .curvature import face_geometry, mean_curvature_normal, rayleigh_quotients, rq_skip_threshold
from .errors import DegenerateScene
from .losses import LossWeights, Snapshot, evaluate, evaluate_term, take_snapshot
from .mesh import TriMesh, average_edge_length, face_areas, ZERO_AREA_RTOL
from .scenes import plane_grid

logger = logging.getLogger(__name__)


@dataclass
class GradField:
    """Per-vertex gradient (loss units / cm) and the snapshot it was taken under."""

    per_vertex: np.ndarray
    snapshot: Snapshot | None = None
    counters: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = ~np.isfinite(self.per_vertex)
        if bad.any():
            # never hand NaN/Inf to an optimizer
            self.counters["nonfinite_zeroed"] = int(bad.any(axis=1).sum())
            self.per_vertex = np.where(bad, 0.0, self.per_vertex)


def _term_name(term, k):
    if term == "rq":
        return f"rq{k or 8}"
    return term


def _snapshot_for(name, pred, gt, body, snapshot):
    if snapshot is not None:
        return snapshot
    if name == "pen":
        return take_snapshot(pred, gt, body)
    if name.startswith("rq"):
        return take_snapshot(pred, gt, None, (int(name[2:]),))
    return Snapshot()


def grad_term(term, pred, gt, body=None, weights=None, k=None, snapshot=None):
    """Value and gradient of a single loss term.

    ``term`` is one of ``vert``, ``pen``, ``norm``, ``bend``, ``rq`` (with
    ``k``), ``rq8``/``rq16``/``rq32`` or ``mc``.
    """
    weights = weights or LossWeights()
    name = _term_name(term, k)
    snapshot = _snapshot_for(name, pred, gt, body, snapshot)
    res = evaluate_term(name, pred, gt, body, weights, snapshot, with_grad=True)
    return res.value, GradField(res.grad, snapshot, dict(res.counters))


def grad_compose(pred, gt, body=None, weights=None, recipe="P", snapshot=None, **kwargs):
    """:class:`~drapegeom.losses.LossReport` and the gradient of its total."""
    report, grad = evaluate(pred, gt, body, weights or LossWeights(), recipe, snapshot,
                            with_grad=True, **kwargs)
    return report, GradField(grad, snapshot, dict(report.counters))


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckResult:
    target: str
    max_rel_error: float
    trial_errors: list
    resamples: int
    h: float

    def passed(self, tol=1e-5):
        return self.max_rel_error <= tol


def _random_grid(rng, nx=7, ny=7, edge=1.0):
    base = plane_grid(nx, ny, edge)
    v = base.vertices.copy()
    v[:, :2] += rng.uniform(-0.15, 0.15, size=(len(v), 2)) * edge
    v[:, 2] += rng.uniform(-0.3, 0.3, size=len(v)) * edge
    return base.with_vertices(v)


def random_scene(rng, with_body=False):
    """A jittered grid as ground truth, a nearby prediction and optionally a flat body below."""
    gt = _random_grid(rng)
    pred = gt.with_vertices(gt.vertices + rng.normal(scale=0.03, size=gt.vertices.shape))
    body = None
    if with_body:
        b = plane_grid(9, 9, 1.0)
        shift = np.array([-0.5, -0.5, -0.1])
        body = b.with_vertices(b.vertices + shift)
    return pred, gt, body


def _terms_of(target, weights):
    """Loss terms exercised by a term name or recipe."""
    if target in ("vert", "pen", "norm", "bend", "mc") or target.startswith("rq") and target[2:].isdigit():
        return [target]
    recipe = losses.normalize_recipe(target)
    return list(losses.recipe_weights(recipe, weights, with_body=True))


def scene_is_smooth(terms, pred, gt, body, weights, snapshot, margin):
    """True when no discrete branch is within ``margin`` of switching."""
    for mesh in (pred, gt):
        tol = ZERO_AREA_RTOL * average_edge_length(mesh) ** 2
        if np.any(face_areas(mesh) <= max(tol, margin)):
            return False
    if "bend" in terms:
        pairs = gt.topology.two_edge_pairs
        dp = np.linalg.norm(pred.vertices[pairs[:, 0]] - pred.vertices[pairs[:, 1]], axis=1)
        dg = np.linalg.norm(gt.vertices[pairs[:, 0]] - gt.vertices[pairs[:, 1]], axis=1)
        if np.any(np.abs(dp - dg) <= margin):
            return False
    if "mc" in terms:
        for mesh in (pred, gt):
            if mean_curvature_normal(mesh).clamp_events:
                return False
        dots, _, dbl, _ = face_geometry(pred)
        p = pred.vertices[pred.faces]
        lengths = np.stack([
            np.linalg.norm(p[:, (c + 1) % 3] - p[:, c], axis=1)
            * np.linalg.norm(p[:, (c + 2) % 3] - p[:, c], axis=1) for c in range(3)
        ], axis=1)
        # obtuse-branch switch happens at a right angle
        if np.any(np.abs(dots) <= margin * lengths):
            return False
        if weights.mc_clamp_threshold is not None:
            return False
    if "pen" in terms and body is not None:
        anchors, normals = losses.offset_body(body, weights.body_offset_fraction)
        bi = snapshot.correspondences.body_index
        signed = np.einsum("ij,ij->i", normals[bi], pred.vertices - anchors[bi])
        gap = np.linalg.norm(pred.vertices - gt.vertices, axis=1)
        if np.any(np.abs(signed) <= margin) or np.any(np.abs(gap - weights.d_tol_cm) <= margin):
            return False
    for t in terms:
        if t.startswith("rq"):
            k = int(t[2:])
            rq, usable, *_ = rayleigh_quotients(pred.vertices, snapshot.pred_neighbors[k],
                                                rq_skip_threshold(pred))
            # argmin / argmax must not be about to swap
            lo = np.sort(np.where(usable, rq, np.inf), axis=1)
            hi = np.sort(np.where(usable, rq, -np.inf), axis=1)
            if np.any(np.isfinite(lo[:, 1]) & (lo[:, 1] - lo[:, 0] <= margin)):
                return False
            if np.any(np.isfinite(hi[:, -2]) & (hi[:, -1] - hi[:, -2] <= margin)):
                return False
    return True


def finite_difference_check(target, h=1e-6, trials=30, seed=0, coords=12, weights=None,
                            scene_factory=None, atol=1e-9, rel_floor=1e-3, resample_budget=200):
    """Compare analytic gradients with central differences on random scenes.

    ``target`` is a term name (``vert``, ``pen``, ``norm``, ``bend``, ``mc``,
    ``rq`` for all three scales, or ``rq8`` etc.) or a recipe. Per trial,
    ``coords`` coordinates are drawn among those whose analytic component is
    at least ``rel_floor`` times the largest one, and the discrepancy is
    measured relative to ``max(|analytic|, |fd|, atol)``. Returns the
    largest relative discrepancy seen.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    weights = weights or LossWeights()
    rng = np.random.default_rng(seed)
    if target == "rq":
        targets = [f"rq{k}" for k in losses.RQ_SCALES]
    else:
        targets = [target]
    errors = []
    resamples = 0
    for trial in range(trials):
        tname = targets[trial % len(targets)]
        terms = _terms_of(tname, weights)
        is_term = len(terms) == 1 and terms[0] == tname
        need_body = "pen" in terms
        for attempt in range(resample_budget):
            if scene_factory is not None:
                pred, gt, body = scene_factory(rng)
            else:
                pred, gt, body = random_scene(rng, with_body=need_body)
            ks = tuple(int(t[2:]) for t in terms if t.startswith("rq"))
            snap = take_snapshot(pred, gt, body if need_body else None, ks)
            if scene_is_smooth(terms, pred, gt, body, weights, snap, 10 * h):
                break
            resamples += 1
        else:
            raise DegenerateScene(f"no smooth scene for {tname!r} after {resample_budget} draws")

        if is_term:
            def value(p, name=tname):
                return evaluate_term(name, p, gt, body, weights, snap).value
            grad = evaluate_term(tname, pred, gt, body, weights, snap, with_grad=True).grad
        else:
            def value(p, name=tname):
                return evaluate(p, gt, body, weights, name, snap)[0].total
            grad = evaluate(pred, gt, body, weights, tname, snap, with_grad=True)[1]

        flat = grad.ravel()
        big = np.abs(flat).max()
        pool = np.flatnonzero(np.abs(flat) >= rel_floor * big) if big > 0 else np.arange(flat.size)
        pick = rng.choice(pool, size=min(coords, len(pool)), replace=False)
        worst = 0.0
        x0 = pred.vertices
        for idx in pick:
            i, a = divmod(int(idx), 3)
            xp = x0.copy()
            xp[i, a] += h
            xm = x0.copy()
            xm[i, a] -= h
            fd = (value(pred.with_vertices(xp)) - value(pred.with_vertices(xm))) / (2 * h)
            an = flat[idx]
            worst = max(worst, abs(fd - an) / max(abs(an), abs(fd), atol))
        errors.append(worst)
        logger.debug("gradcheck %s trial %d: %.3e", tname, trial, worst)
    return GradCheckResult(str(target), max(errors) if errors else 0.0, errors, resamples, h)
