"""Gradient-descent refinement of per-vertex translations.

Starting from an initial garment (e.g. a smooth or skinned drape), the
translation of every vertex is optimized so the mesh minimizes a loss
recipe against a target. Correspondences and KNN neighbourhoods are
refreshed every ``snapshot_refresh_every`` steps and held fixed in between.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteLoss, TopologyMismatch
from .losses import (
    LossWeights,
    evaluate,
    normalize_recipe,
    offset_body,
    recipe_weights,
    take_snapshot,
)
from .mesh import average_edge_length
from .metrics import penetration_count

logger = logging.getLogger(__name__)

OPTIMIZERS = ("plain", "momentum", "adaptive")


@dataclass
class RefineConfig:
    """Optimizer settings.

    ``step_size`` defaults to ``0.001 * scene_scale`` for the adaptive
    optimizer (scene scale = mean target edge length) and to
    ``0.5 * n_vertices`` for plain/momentum descent, the exact minimizing
    step of the vertex term.
    """

    recipe: str = "P"
    weights: LossWeights = field(default_factory=LossWeights)
    steps: int = 500
    optimizer: str = "adaptive"
    step_size: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    snapshot_refresh_every: int = 10
    trace_every: int = 10
    max_halvings: int = 20
    armijo: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        self.recipe = normalize_recipe(self.recipe)
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_mapping(self.weights)
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("step_size must be > 0")
        if self.snapshot_refresh_every < 1:
            raise ConfigError("snapshot_refresh_every must be >= 1")
        if self.trace_every < 1:
            raise ConfigError("trace_every must be >= 1")

    def resolved_step(self, target):
        if self.step_size is not None:
            return float(self.step_size)
        if self.optimizer == "adaptive":
            return 1e-3 * average_edge_length(target)
        return 0.5 * target.n_vertices

    def as_dict(self):
        d = asdict(self)
        d["weights"] = self.weights.as_dict()
        return d

    @classmethod
    def from_mapping(cls, data):
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown refine keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RefineResult:
    final_mesh: object
    trace: list
    clamp_events: int = 0
    degenerate_events: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0
    refreshes: list = field(default_factory=list)
    step_size: float = 0.0
    penetration: object = None


class _Objective:
    """Loss and gradient of one problem under an explicitly refreshed snapshot."""

    def __init__(self, target, body, weights, recipe, term_weights=None, d_tol=None,
                 body_frame=None):
        self.target = target
        self.body = body
        self.weights = weights
        self.recipe = recipe
        self.term_weights = term_weights or recipe_weights(recipe, weights, with_body=body is not None)
        self.d_tol = d_tol
        self.ks = tuple(int(t[2:]) for t in self.term_weights if t.startswith("rq"))
        self.body_frame = body_frame
        if body is not None and body_frame is None:
            self.body_frame = offset_body(body, weights.body_offset_fraction)
        self._gt_neighbors = None
        self.snapshot = None

    def refresh(self, mesh):
        body = self.body if "pen" in self.term_weights else None
        self.snapshot = take_snapshot(mesh, self.target, body, self.ks, self._gt_neighbors)
        if self.ks and self._gt_neighbors is None:
            self._gt_neighbors = dict(self.snapshot.gt_neighbors)

    def __call__(self, mesh, with_grad=False):
        return evaluate(mesh, self.target, self.body, self.weights, self.recipe, self.snapshot,
                        with_grad=with_grad, body_frame=self.body_frame,
                        term_weights=self.term_weights, d_tol=self.d_tol)


def _degenerate_count(report):
    c = report.counters
    return c.get("skipped_faces", 0) + sum(v for k, v in c.items() if k.endswith("_degenerate"))


def _run(init, objective, config, step, callback=None):
    x = init.vertices.copy()
    mesh = init
    trace = []
    refreshes = []
    vel = np.zeros_like(x)
    m1 = np.zeros_like(x)
    m2 = np.zeros_like(x)
    clamp_events = degenerate_events = accepted = rejected = 0
    report = None

    def fail(msg):
        res = RefineResult(mesh, trace, clamp_events, degenerate_events, accepted, rejected,
                           refreshes, step)
        raise NonFiniteLoss(msg, res)

    for it in range(config.steps):
        if it % config.snapshot_refresh_every == 0:
            objective.refresh(mesh)
            refreshes.append(it)
        report, grad = objective(mesh, with_grad=True)
        if not math.isfinite(report.total):
            fail(f"non-finite loss at step {it}")
        clamp_events += report.clamp_events
        degenerate_events += _degenerate_count(report)
        if it % config.trace_every == 0:
            trace.append((it, report))
        g = grad
        if config.optimizer == "plain":
            gg = float(np.sum(g * g))
            if gg == 0.0:
                accepted += 1
                continue
            eta = step
            for _ in range(config.max_halvings + 1):
                cand = mesh.with_vertices(x - eta * g)
                val = objective(cand)[0].total
                if math.isfinite(val) and val <= report.total - config.armijo * eta * gg:
                    break
                eta *= 0.5
            else:
                rejected += 1
                continue
            x = x - eta * g
            accepted += 1
        elif config.optimizer == "momentum":
            vel = config.momentum * vel + g
            x = x - step * vel
            accepted += 1
        else:
            t = it + 1
            m1 = config.beta1 * m1 + (1 - config.beta1) * g
            m2 = config.beta2 * m2 + (1 - config.beta2) * g * g
            mhat = m1 / (1 - config.beta1**t)
            vhat = m2 / (1 - config.beta2**t)
            x = x - step * mhat / (np.sqrt(vhat) + config.eps)
            accepted += 1
        mesh = init.with_vertices(x)
        if callback is not None:
            callback(it + 1, mesh)

    final_report, _ = objective(mesh)
    if not math.isfinite(final_report.total):
        fail("non-finite loss at the final mesh")
    trace.append((config.steps, final_report))
    return RefineResult(mesh, trace, clamp_events, degenerate_events, accepted, rejected,
                        refreshes, step)


def refine(init, target, body=None, config=None, callback=None):
    """Optimize vertex translations of ``init`` towards ``target`` under ``config.recipe``.

    Without a body the interpenetration term is skipped. The returned trace
    holds ``(step, LossReport)`` pairs every ``trace_every`` steps plus the
    final state. ``callback(step, mesh)`` is called after every update.
    """
    config = config or RefineConfig()
    if not init.same_topology(target):
        raise TopologyMismatch("init and target must share the same face list")
    objective = _Objective(target, body, config.weights, config.recipe)
    return _run(init, objective, config, config.resolved_step(target), callback)


def resolve_penetration(garment, body, config=None, anchor_weight=0.1, margin=None, callback=None):
    """Push ``garment`` out of ``body`` while keeping it near its starting position.

    Minimizes ``L_pen + anchor_weight * L_vert(., garment)`` with the
    ground-truth proximity gate disabled (the anchor is not a ground truth).
    The penalty targets the offset body planes moved out by a further
    ``margin`` (default 5% of the body's mean edge length) so the result
    clears the planes used by :func:`~drapegeom.metrics.penetration_count`.
    """
    if config is None:
        config = RefineConfig(steps=300, optimizer="plain", trace_every=1)
    weights = config.weights
    anchors, normals = offset_body(body, weights.body_offset_fraction)
    if margin is None:
        margin = 0.05 * average_edge_length(body)
    frame = (anchors + margin * normals, normals)
    objective = _Objective(garment, body, weights, "P",
                           term_weights={"pen": 1.0, "vert": float(anchor_weight)},
                           d_tol=math.inf, body_frame=frame)
    result = _run(garment, objective, config, config.resolved_step(garment), callback)
    result.penetration = penetration_count(result.final_mesh, body, weights)
    return result
