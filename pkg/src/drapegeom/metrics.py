"""Evaluation metrics: vertex distance, facet-normal angle, normalized L2, precision curves
and interpenetration counts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBoundingBox, FaceCountMismatch, VertexCountMismatch
from .losses import LossWeights, offset_body
from .mesh import facet_normals
from .spatial import nearest_correspondences


def _same_vertices(pred, gt):
    if pred.n_vertices != gt.n_vertices:
        raise VertexCountMismatch(f"pred has {pred.n_vertices} vertices, gt has {gt.n_vertices}")


def vertex_errors(pred, gt):
    """Per-vertex Euclidean distance (cm)."""
    _same_vertices(pred, gt)
    return np.linalg.norm(pred.vertices - gt.vertices, axis=1)


def face_angle_errors(pred, gt):
    """Per-face angle between predicted and true unit normals, in degrees."""
    if pred.n_faces != gt.n_faces:
        raise FaceCountMismatch(f"pred has {pred.n_faces} faces, gt has {gt.n_faces}")
    ng, np_ = facet_normals(gt), facet_normals(pred)
    # atan2 keeps small angles accurate where arccos(dot) loses them to rounding
    sin = np.linalg.norm(np.cross(ng, np_), axis=1)
    cos = np.einsum("ij,ij->i", ng, np_)
    return np.degrees(np.arctan2(sin, cos))


def e_dist(pred, gt):
    """Mean vertex-to-vertex distance (cm)."""
    return float(np.mean(vertex_errors(pred, gt)))


def e_norm(pred, gt):
    """Mean facet-normal angular deviation (degrees)."""
    return float(np.mean(face_angle_errors(pred, gt)))


def normalized_l2_pct(pred, gt):
    """``100 * ||gt - pred|| / ||gt||`` on vectorized positions mapped to [0, 1].

    Both meshes go through the same per-axis affine map, taken from the
    ground-truth bounding box.
    """
    _same_vertices(pred, gt)
    lo = gt.vertices.min(axis=0)
    ext = gt.vertices.max(axis=0) - lo
    if np.any(ext <= 0):
        raise DegenerateBoundingBox(f"ground truth has zero extent on axis {int(np.argmin(ext))}")
    g = (gt.vertices - lo) / ext
    p = (pred.vertices - lo) / ext
    return float(100.0 * np.linalg.norm((g - p).ravel()) / np.linalg.norm(g.ravel()))


def precision_curve(pred, gt, thresholds, kind="distance"):
    """Fraction of vertices (``distance``, cm) or faces (``angle``, degrees) with error below each threshold.

    ``pred`` and ``gt`` may also be equal-length sequences of meshes; errors
    are then pooled over all samples.
    """
    errs = _pooled_errors(pred, gt, kind)
    th = np.asarray(thresholds, dtype=np.float64)
    srt = np.sort(errs)
    frac = np.searchsorted(srt, th, side="left") / len(srt)
    return np.stack([th, frac], axis=1)


def precision_curve_per_sample(preds, gts, thresholds, kind="distance"):
    """Precision curve averaged over samples instead of pooled."""
    curves = [precision_curve(p, g, thresholds, kind)[:, 1] for p, g in zip(preds, gts)]
    th = np.asarray(thresholds, dtype=np.float64)
    return np.stack([th, np.mean(curves, axis=0)], axis=1)


def _pooled_errors(pred, gt, kind):
    preds = pred if isinstance(pred, (list, tuple)) else [pred]
    gts = gt if isinstance(gt, (list, tuple)) else [gt]
    if len(preds) != len(gts):
        raise ValueError("pred and gt sample lists differ in length")
    fn = {"distance": vertex_errors, "angle": face_angle_errors}.get(kind)
    if fn is None:
        raise ValueError(f"kind must be 'distance' or 'angle', got {kind!r}")
    return np.concatenate([fn(p, g) for p, g in zip(preds, gts)])


@dataclass
class PenetrationReport:
    count: int
    depths: np.ndarray
    signed: np.ndarray = field(repr=False, default=None)


def penetration_count(garment, body, weights=None, body_frame=None):
    """Garment vertices behind the tangent plane of their nearest offset body vertex.

    ``depths`` holds the positive penetration depth per garment vertex (0
    when outside).
    """
    weights = weights or LossWeights()
    anchors, normals = body_frame or offset_body(body, weights.body_offset_fraction)
    corr = nearest_correspondences(garment, body)
    bi = corr.body_index
    signed = np.einsum("ij,ij->i", normals[bi], garment.vertices - anchors[bi])
    depths = np.where(signed < 0, -signed, 0.0)
    return PenetrationReport(int(np.sum(signed < 0)), depths, signed)


@dataclass
class EvalReport:
    e_dist: float
    e_norm: float
    normalized_l2_pct: float | None
    penetration_count: int | None
    precision_curve: np.ndarray | None = None
    angle_curve: np.ndarray | None = None

    def as_dict(self):
        d = {
            "e_dist_cm": self.e_dist,
            "e_norm_deg": self.e_norm,
            "normalized_l2_pct": self.normalized_l2_pct,
            "penetration_count": self.penetration_count,
        }
        if self.precision_curve is not None:
            d["precision_curve_distance"] = self.precision_curve.tolist()
        if self.angle_curve is not None:
            d["precision_curve_angle"] = self.angle_curve.tolist()
        return d


DEFAULT_DIST_THRESHOLDS = np.linspace(0.0, 3.0, 31)
DEFAULT_ANGLE_THRESHOLDS = np.linspace(0.0, 30.0, 31)


def evaluate(pred, gt, body=None, weights=None, dist_thresholds=None, angle_thresholds=None):
    """All metrics for one prediction; the normalized L2 is ``None`` for flat ground truth."""
    try:
        nl2 = normalized_l2_pct(pred, gt)
    except DegenerateBoundingBox:
        nl2 = None
    pen = penetration_count(pred, body, weights).count if body is not None else None
    dist_t = DEFAULT_DIST_THRESHOLDS if dist_thresholds is None else dist_thresholds
    ang_t = DEFAULT_ANGLE_THRESHOLDS if angle_thresholds is None else angle_thresholds
    return EvalReport(
        e_dist(pred, gt), e_norm(pred, gt), nl2, pen,
        precision_curve(pred, gt, dist_t, "distance"),
        precision_curve(pred, gt, ang_t, "angle"),
    )
