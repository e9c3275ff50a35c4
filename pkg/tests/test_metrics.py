import math

import numpy as np
import pytest

from drapegeom.errors import DegenerateBoundingBox, VertexCountMismatch
from drapegeom.losses import l_vert
from drapegeom.mesh import average_edge_length, build_mesh
from drapegeom.metrics import (
    e_dist,
    e_norm,
    evaluate,
    normalized_l2_pct,
    penetration_count,
    precision_curve,
    precision_curve_per_sample,
)
from drapegeom.scenes import capsule_drape, icosphere, plane_grid, wrinkled_plane

TRI = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])


def unit_cube():
    v = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float)
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    f = []
    for a, b, c, d in quads:
        f += [(a, b, c), (a, c, d)]
    return build_mesh(v, f)


def test_e_dist_examples():
    g = wrinkled_plane(6, 6)
    assert e_dist(g, g) == 0.0
    assert e_dist(g.with_vertices(g.vertices + [1.0, 0, 0]), g) == pytest.approx(1.0, abs=1e-12)
    gt = build_mesh(TRI, [[0, 1, 2]])
    pred = gt.with_vertices(TRI + [[1, 0, 0], [0, 2, 0], [0, 0, 3]])
    assert e_dist(pred, gt) == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(VertexCountMismatch):
        e_dist(g, plane_grid(3, 3))


def test_e_norm_examples():
    g = icosphere(2)
    assert e_norm(g, g) == 0.0
    flipped = build_mesh(g.vertices, g.faces[:, ::-1])
    assert e_norm(flipped, g) == pytest.approx(180.0, abs=1e-9)
    gt = build_mesh(TRI, [[0, 1, 2]])
    a = math.radians(30)
    rot = np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])
    assert e_norm(gt.with_vertices(TRI @ rot.T), gt) == pytest.approx(30.0, abs=1e-9)


def test_normalized_l2():
    cube = unit_cube()
    assert normalized_l2_pct(cube, cube) == 0.0
    g = cube.vertices
    u = np.array([1.0, 2.0, -2.0]) / 3.0
    m = 0.03 * np.linalg.norm(g) / math.sqrt(len(g))
    assert normalized_l2_pct(cube.with_vertices(g + m * u), cube) == pytest.approx(3.0, rel=1e-12)


def test_normalized_l2_scale_invariant():
    rng = np.random.default_rng(0)
    gt = wrinkled_plane(6, 6, amplitude=0.5)
    pred = gt.with_vertices(gt.vertices + rng.normal(scale=0.05, size=gt.vertices.shape))
    a = normalized_l2_pct(pred, gt)
    s = np.array([2.0, 0.5, 7.0])
    b = normalized_l2_pct(pred.with_vertices(pred.vertices * s + 3), gt.with_vertices(gt.vertices * s + 3))
    assert b == pytest.approx(a, rel=1e-10)


def test_normalized_l2_flat_gt():
    g = plane_grid(4, 4)
    with pytest.raises(DegenerateBoundingBox):
        normalized_l2_pct(g, g)
    assert evaluate(g, g).normalized_l2_pct is None


def test_precision_examples():
    g = wrinkled_plane(6, 6)
    th = [0.1, 1.0, 10.0]
    assert precision_curve(g, g, th)[:, 1].tolist() == [1.0, 1.0, 1.0]
    moved = g.with_vertices(g.vertices + [0, 1.0, 0])
    assert precision_curve(moved, g, [0.5, 1.5])[:, 1].tolist() == [0.0, 1.0]


def test_precision_matches_brute_force():
    rng = np.random.default_rng(1)
    gt = wrinkled_plane(8, 8, jitter=0.2)
    preds = [gt.with_vertices(gt.vertices + rng.normal(scale=s, size=gt.vertices.shape)) for s in (0.1, 0.5)]
    th = np.linspace(0, 2, 17)
    curve = precision_curve(preds, [gt, gt], th)
    errs = [np.linalg.norm(p.vertices[i] - gt.vertices[i]) for p in preds for i in range(gt.n_vertices)]
    want = [sum(e < t for e in errs) / len(errs) for t in th]
    assert np.allclose(curve[:, 1], want, atol=0)
    assert np.all(np.diff(curve[:, 1]) >= 0)
    ang = precision_curve(preds, [gt, gt], [5.0, 20.0], kind="angle")
    assert np.all((ang[:, 1] >= 0) & (ang[:, 1] <= 1))
    per = precision_curve_per_sample(preds, [gt, gt], th)
    each = [precision_curve(p, gt, th)[:, 1] for p in preds]
    assert np.allclose(per[:, 1], np.mean(each, axis=0))
    with pytest.raises(ValueError):
        precision_curve(gt, gt, th, kind="area")


def test_penetration_examples():
    body = plane_grid(5, 5)
    body = body.with_vertices(body.vertices - [2.0, 2.0, 0.0])
    z0 = 0.2 * average_edge_length(body)
    v = np.array([[0.0, 0, z0 + 1], [1, 0, z0 + 1], [0, 1, z0 + 1]])
    cloth = build_mesh(v, [[0, 1, 2]])
    assert penetration_count(cloth, body).count == 0
    v[0, 2] = z0 - 0.25
    rep = penetration_count(cloth.with_vertices(v), body)
    assert rep.count == 1
    assert rep.depths[0] == pytest.approx(0.25, abs=1e-12)
    assert np.all(rep.depths[1:] == 0)


def test_penetration_capsule():
    body, cloth = capsule_drape(gap=-0.5)
    assert penetration_count(cloth, body).count == 25
    body, cloth = capsule_drape(gap=1.0)
    assert penetration_count(cloth, body).count == 0


def test_edist_squared_below_lvert():
    rng = np.random.default_rng(2)
    for _ in range(100):
        gt = plane_grid(5, 5).with_vertices(rng.normal(size=(25, 3)))
        pred = gt.with_vertices(gt.vertices + rng.normal(scale=rng.uniform(0.01, 2), size=(25, 3)))
        assert e_dist(pred, gt) ** 2 <= l_vert(pred, gt) * (1 + 1e-12)


def test_evaluate_report():
    body, cloth = capsule_drape(gap=1.0)
    rep = evaluate(cloth, cloth, body)
    d = rep.as_dict()
    assert d["e_dist_cm"] == 0.0 and d["penetration_count"] == 0
    assert d["precision_curve_distance"][-1][1] == 1.0
