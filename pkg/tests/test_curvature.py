import math

import numpy as np
import pytest

from drapegeom.curvature import (
    COT_CLAMP,
    covariances,
    eigen_curvature,
    gaussian_curvature,
    knn_neighborhoods,
    mean_curvature_normal,
    neighborhood_covariance,
    rayleigh_curvature,
    rq_skip_threshold,
    uniform_laplacian_curvature,
)
from drapegeom.errors import KTooLarge
from drapegeom.mesh import build_mesh, mixed_area
from drapegeom.scenes import capsule, cylinder, icosphere, plane_grid, wrinkled_plane

import oracles


def test_gaussian_flat_grid():
    g = plane_grid(6, 6, jitter=0.2)
    k = gaussian_curvature(g)
    assert np.abs(k.values[g.interior_vertices]).max() < 1e-10
    assert np.array_equal(k.boundary, g.boundary_vertices)


def test_gaussian_sphere_and_gauss_bonnet():
    s = icosphere(4)
    k = gaussian_curvature(s)
    assert 0.95 <= k.mean() <= 1.05
    total = np.sum(k.values * k.extras["mixed_area"])
    assert total == pytest.approx(4 * math.pi, rel=0.01)


def test_gauss_bonnet_capsule():
    c = capsule(1.0, 2.0, 32)
    k = gaussian_curvature(c)
    assert np.sum(k.values * mixed_area(c)) == pytest.approx(4 * math.pi, rel=0.01)


def test_gaussian_cylinder():
    c = cylinder(64, 20, radius=1.0)
    k = gaussian_curvature(c)
    assert np.abs(k.values[k.valid]).max() < 0.02


@pytest.mark.parametrize("seed", range(3))
def test_gaussian_matches_oracle(seed):
    m = wrinkled_plane(6, 6, jitter=0.3, seed=seed, amplitude=0.6)
    want = (2 * math.pi - oracles.angle_sums(m.vertices, m.faces)) / oracles.mixed_areas(m.vertices, m.faces)
    assert np.allclose(gaussian_curvature(m).values, want, rtol=1e-9, atol=1e-12)


def test_mean_curvature_flat():
    g = plane_grid(6, 6, jitter=0.2)
    k = mean_curvature_normal(g)
    assert np.linalg.norm(k.values[g.interior_vertices], axis=1).max() < 1e-10


def test_mean_curvature_sphere():
    s = icosphere(4)
    k = mean_curvature_normal(s)
    mag = np.linalg.norm(k.values, axis=1)
    assert 1.90 <= mag.mean() <= 2.10
    inward = -s.vertices / np.linalg.norm(s.vertices, axis=1, keepdims=True)
    cosang = np.einsum("ij,ij->i", k.values / mag[:, None], inward)
    ang = np.degrees(np.arccos(np.clip(cosang, -1, 1)))
    assert np.mean(ang <= 2.0) >= 0.99
    assert k.clamp_events == 0


def test_mean_curvature_cylinder():
    c = cylinder(64, 30, radius=2.0)
    k = mean_curvature_normal(c)
    mag = np.linalg.norm(k.values[k.valid], axis=1)
    assert mag.mean() == pytest.approx(0.5, rel=0.07)


@pytest.mark.parametrize("seed", range(3))
def test_mean_curvature_matches_oracle(seed):
    m = wrinkled_plane(6, 6, jitter=0.3, seed=seed, amplitude=0.6)
    k = mean_curvature_normal(m)
    want = oracles.mean_curvature_normals(m.vertices, m.faces)
    assert np.allclose(k.values, want, rtol=1e-9, atol=1e-12)


def test_cot_clamp_counts_sliver():
    # nearly flat sliver: the apex angle is ~pi so its cotangent is huge
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0.5, 1e-6, 0], [0.5, -1, 0]])
    m = build_mesh(v, [[0, 1, 2], [0, 3, 1]], warn=False)
    k = mean_curvature_normal(m)
    assert k.clamp_events >= 1
    assert np.all(np.isfinite(k.values))
    unclamped = mean_curvature_normal(m, clamp=np.inf)
    assert unclamped.clamp_events == 0
    assert COT_CLAMP == 1e4


def test_uniform_laplacian_examples():
    m = build_mesh([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert np.allclose(uniform_laplacian_curvature(m).values[0], [0.5, 0.5, 0])
    g = plane_grid(5, 5)
    assert np.allclose(uniform_laplacian_curvature(g).values[g.interior_vertices], 0, atol=1e-15)
    w = wrinkled_plane(6, 6)
    a = uniform_laplacian_curvature(w).values
    b = uniform_laplacian_curvature(w.with_vertices(3.0 * w.vertices)).values
    assert np.allclose(b, 3.0 * a, atol=1e-12)


def test_covariance_examples():
    pts = np.array([[1.0, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]])
    _, cov = covariances(pts, np.array([[0, 1, 2, 3]]))
    assert np.allclose(cov[0], np.diag([0.5, 0.5, 0.0]), atol=1e-15)
    same = np.zeros((5, 3)) + [1, 2, 3]
    _, cov = covariances(same, np.arange(5)[None])
    assert np.all(cov == 0)


def test_neighborhood_covariance_matches_oracle():
    m = wrinkled_plane(8, 8, jitter=0.2)
    for v in (0, 17, 40):
        cov, mean = neighborhood_covariance(m, v, 8)
        idx, _ = oracles.brute_knn(m.vertices, m.vertices[v], 8)
        want, wmean = oracles.covariance(m.vertices, idx)
        assert np.allclose(cov, want, atol=1e-14)
        assert np.allclose(mean, wmean, atol=1e-14)
        assert np.allclose(cov, cov.T)
    with pytest.raises(KTooLarge):
        neighborhood_covariance(m, 0, 65)


def test_eigen_coplanar_and_sphere():
    g = plane_grid(8, 8, jitter=0.2)
    e = eigen_curvature(g, 8).values
    assert np.all(e[:, 0] <= 1e-12 * e.sum(axis=1))
    assert np.all(e >= -1e-12) and np.all(np.diff(e, axis=1) >= 0)
    s = icosphere(3)
    es = eigen_curvature(s, 8).values
    assert np.all(es[:, 0] > 0)
    assert np.mean(es[:, 0] / es[:, 2]) > np.mean(e[:, 0] / e[:, 2])


@pytest.mark.parametrize("mesh", [wrinkled_plane(7, 7, jitter=0.2, amplitude=0.4), icosphere(2)])
def test_eigen_matches_jacobi(mesh):
    e = eigen_curvature(mesh, 16)
    nbr = knn_neighborhoods(mesh, 16)
    _, cov = covariances(mesh.vertices, nbr)
    for i in range(0, mesh.n_vertices, 5):
        assert np.allclose(e.values[i], oracles.jacobi_eigvals_3x3(cov[i]), atol=1e-12)


def test_rayleigh_flat_grid():
    # coplanar neighbours: every centred direction lies in the plane, so the
    # quotient is bounded below by the smaller in-plane eigenvalue, not by 0
    g = plane_grid(8, 8, jitter=0.2)
    r = rayleigh_curvature(g, 8)
    e = eigen_curvature(g, 8).values
    assert e[:, 0].max() <= 1e-12 * e.sum(axis=1).max()
    assert np.all(r.values[:, 0] >= e[:, 1] - 1e-9)
    assert np.all(r.values[:, 1] <= e[:, 2] + 1e-9)


def test_rayleigh_matches_oracle():
    m = wrinkled_plane(8, 8, jitter=0.2, amplitude=0.5)
    r = rayleigh_curvature(m, 8)
    skip = rq_skip_threshold(m)
    for i in range(m.n_vertices):
        idx, _ = oracles.brute_knn(m.vertices, m.vertices[i], 8)
        lo, hi = oracles.rq_min_max(m.vertices, idx, skip)
        assert r.values[i, 0] == pytest.approx(lo, rel=1e-10, abs=1e-14)
        assert r.values[i, 1] == pytest.approx(hi, rel=1e-10, abs=1e-14)


def test_rayleigh_invariants():
    m = icosphere(3)
    for k in (8, 16, 32):
        r = rayleigh_curvature(m, k)
        e = eigen_curvature(m, k).values
        v = r.values
        ok = ~r.degenerate
        assert np.all(v[ok, 0] <= v[ok, 1]) and np.all(v[ok, 1] >= 0)
        assert np.all(e[ok, 0] - 1e-9 <= v[ok, 0])
        assert np.all(v[ok, 1] <= e[ok, 2] + 1e-9)


def test_rayleigh_degenerate_all_coincident():
    # three coincident points: the K=3 neighbourhood of each is the same point
    pts = np.array([[0.0, 0, 0], [0, 0, 0], [0, 0, 0], [10, 0, 0], [10, 1, 0]])
    m = build_mesh(pts, [[0, 3, 4]], warn=False)
    r = rayleigh_curvature(m, 3)
    assert r.degenerate[:3].all()
    assert np.all(r.values[:3] == 0)


def test_rayleigh_ridges_differ_from_flat():
    flat = plane_grid(16, 16, jitter=0.1)
    wav = wrinkled_plane(16, 16, amplitude=0.3, wavelength=4.0, jitter=0.1)
    rf = rayleigh_curvature(flat, 8).values[:, 0]
    rw = rayleigh_curvature(wav, 8).values[:, 0]
    ridge = np.abs(wav.vertices[:, 2]) >= 0.9 * 0.3
    assert ridge.sum() > 10
    # bending mixes the small normal-direction variance into neighbour
    # directions, so ridges read lower than the flat in-plane floor
    assert rw[ridge].mean() < 0.8 * rf.mean()


def test_scale_covariance():
    m = wrinkled_plane(8, 8, jitter=0.2, amplitude=0.5)
    s = 2.5
    ms = m.with_vertices(s * m.vertices)
    assert np.allclose(gaussian_curvature(ms).values, gaussian_curvature(m).values / s**2, rtol=1e-9, atol=1e-12)
    a = np.linalg.norm(mean_curvature_normal(m).values, axis=1)
    b = np.linalg.norm(mean_curvature_normal(ms).values, axis=1)
    assert np.allclose(b, a / s, rtol=1e-9, atol=1e-12)
    assert np.allclose(rayleigh_curvature(ms, 8).values, s**2 * rayleigh_curvature(m, 8).values, rtol=1e-9, atol=1e-12)


def test_rigid_motion_invariance():
    rng = np.random.default_rng(0)
    m = wrinkled_plane(8, 8, jitter=0.2, amplitude=0.5)
    rot = oracles.random_rotation(rng)
    moved = m.with_vertices(m.vertices @ rot.T + rng.normal(size=3))
    assert np.allclose(gaussian_curvature(moved).values, gaussian_curvature(m).values, rtol=1e-9, atol=1e-9)
    assert np.allclose(mean_curvature_normal(moved).values, mean_curvature_normal(m).values @ rot.T, atol=1e-9)
    for k in (8, 16):
        assert np.allclose(rayleigh_curvature(moved, k).values, rayleigh_curvature(m, k).values, rtol=1e-9, atol=1e-12)
        assert np.allclose(eigen_curvature(moved, k).values, eigen_curvature(m, k).values, rtol=1e-9, atol=1e-12)


def test_no_clamps_on_well_shaped_meshes():
    for m in (icosphere(3), plane_grid(8, 8, equilateral=True), cylinder(32, 10), wrinkled_plane(10, 10)):
        assert mean_curvature_normal(m).clamp_events == 0
