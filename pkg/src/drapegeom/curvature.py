"""Discrete curvature fields on triangle meshes.

Gaussian curvature (angle deficit), the cotangent mean curvature normal,
the uniform Laplacian, K-nearest-neighbour covariance eigenvalues and the
Rayleigh-quotient bounds derived from the same covariance. The mean
curvature normal and Rayleigh fields also expose vector-Jacobian products
(``*_vjp``) used by the loss gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import KTooLarge
from .mesh import average_edge_length, corner_angles, mixed_area, mixed_area_terms
from .spatial import PointIndex

COT_CLAMP = 1e4
# squared-norm skip threshold for centred neighbours, relative to avg edge^2
RQ_SKIP_RTOL = 1e-12


@dataclass
class CurvatureField:
    """Per-vertex curvature values plus validity flags.

    ``values`` is (n,) for gaussian, (n, 3) for mean_normal/uniform_laplacian,
    (n, 3) sorted eigenvalues for eigen and (n, 2) ``(rq_min, rq_max)`` for
    rayleigh. ``valid`` excludes boundary and degenerate vertices.
    """

    kind: str
    values: np.ndarray
    boundary: np.ndarray
    degenerate: np.ndarray
    k: int | None = None
    clamp_events: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def valid(self):
        return ~(self.boundary | self.degenerate)

    def scalar(self):
        """One scalar per vertex, as exported to heatmaps."""
        v = self.values
        if self.kind in ("mean_normal", "uniform_laplacian"):
            return np.linalg.norm(v, axis=1)
        if self.kind == "eigen":
            tr = v.sum(axis=1)
            out = np.zeros(len(v))
            np.divide(v[:, 0], tr, out=out, where=tr > 0)
            return out
        if self.kind == "rayleigh":
            return v[:, 0]
        return v

    def mean(self):
        s = self.scalar()
        return float(np.mean(s[self.valid])) if self.valid.any() else 0.0


def face_geometry(mesh):
    """Dot products, opposite squared edge lengths, doubled area and cotangents per corner."""
    v, f = mesh.vertices, mesh.faces
    p = (v[f[:, 0]], v[f[:, 1]], v[f[:, 2]])
    dots = np.empty((len(f), 3))
    l2 = np.empty((len(f), 3))
    for c in range(3):
        a = p[(c + 1) % 3] - p[c]
        b = p[(c + 2) % 3] - p[c]
        dots[:, c] = np.einsum("ij,ij->i", a, b)
        d = p[(c + 2) % 3] - p[(c + 1) % 3]
        l2[:, c] = np.einsum("ij,ij->i", d, d)
    dbl = np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0]), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cot = dots / dbl[:, None]
    cot[dbl == 0] = 0.0
    return dots, l2, dbl, cot


def gaussian_curvature(mesh):
    """Angle-deficit Gaussian curvature divided by the mixed area (1/cm^2)."""
    ang = corner_angles(mesh)
    total = np.zeros(mesh.n_vertices)
    for c in range(3):
        total += np.bincount(mesh.faces[:, c], weights=ang[:, c], minlength=mesh.n_vertices)
    area = mixed_area(mesh)
    degenerate = area <= 0
    values = np.zeros(mesh.n_vertices)
    ok = ~degenerate
    values[ok] = (2 * np.pi - total[ok]) / area[ok]
    return CurvatureField("gaussian", values, mesh.boundary_vertices.copy(), degenerate,
                          extras={"mixed_area": area})


def _cotangent_laplacian(mesh, clamp):
    _, _, _, cot = face_geometry(mesh)
    clamped = np.abs(cot) > clamp
    cot_c = np.clip(cot, -clamp, clamp)
    lap = np.zeros((mesh.n_vertices, 3))
    v, f = mesh.vertices, mesh.faces
    for c in range(3):
        a, b = f[:, (c + 1) % 3], f[:, (c + 2) % 3]
        d = cot_c[:, c, None] * (v[b] - v[a])
        for k in range(3):
            lap[:, k] += np.bincount(a, weights=d[:, k], minlength=mesh.n_vertices)
            lap[:, k] -= np.bincount(b, weights=d[:, k], minlength=mesh.n_vertices)
    return lap, cot_c, clamped


def mean_curvature_normal(mesh, clamp=COT_CLAMP):
    """Cotangent mean curvature normal, ``(1 / 2A) sum (cot a + cot b)(x_j - x_i)``.

    Its magnitude approximates twice the mean curvature and it points towards
    the centre of curvature. Cotangents are clamped to ``[-clamp, clamp]``;
    the number of clamped corners is reported in ``clamp_events``.
    """
    lap, _, clamped = _cotangent_laplacian(mesh, clamp)
    area = mixed_area(mesh)
    degenerate = area <= 0
    values = np.zeros_like(lap)
    ok = ~degenerate
    values[ok] = lap[ok] / (2 * area[ok, None])
    return CurvatureField("mean_normal", values, mesh.boundary_vertices.copy(), degenerate,
                          clamp_events=int(clamped.sum()),
                          extras={"mixed_area": area, "laplacian": lap})


def _cot_grad(xc, xa, xb):
    """Gradient of cot of the angle at ``xc`` between ``xa - xc`` and ``xb - xc``."""
    e1 = xa - xc
    e2 = xb - xc
    d = np.einsum("ij,ij->i", e1, e2)
    cr = np.cross(e1, e2)
    s = np.linalg.norm(cr, axis=1)
    s_safe = np.where(s > 0, s, 1.0)
    ch = cr / s_safe[:, None]
    ga = e2 / s_safe[:, None] - (d / s_safe**2)[:, None] * np.cross(e2, ch)
    gb = e1 / s_safe[:, None] - (d / s_safe**2)[:, None] * np.cross(ch, e1)
    zero = s == 0
    ga[zero] = 0.0
    gb[zero] = 0.0
    return -(ga + gb), ga, gb


def _scatter(out, idx, vals):
    for k in range(3):
        out[:, k] += np.bincount(idx, weights=vals[:, k], minlength=len(out))


def mean_curvature_vjp(mesh, cotangent, clamp=COT_CLAMP):
    """Pull a per-vertex (n, 3) cotangent back through :func:`mean_curvature_normal`.

    Returns ``sum_i cotangent_i . d kappa_i / d x`` as an (n, 3) array.
    Differentiates the cotangent weights and the mixed areas; clamped
    cotangents and the obtuse-triangle branch are held fixed.
    """
    r = np.asarray(cotangent, dtype=np.float64)
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    lap, cot_c, clamped = _cotangent_laplacian(mesh, clamp)
    area = mixed_area(mesh)
    ok = area > 0
    u = np.zeros((n, 3))
    s = np.zeros(n)
    u[ok] = r[ok] / (2 * area[ok, None])
    s[ok] = -np.einsum("ij,ij->i", r[ok], lap[ok]) / (2 * area[ok] ** 2)

    grad = np.zeros((n, 3))
    # Laplacian part: sum_i u_i . L_i
    for c in range(3):
        ia, ib, ic = f[:, (c + 1) % 3], f[:, (c + 2) % 3], f[:, c]
        du = u[ia] - u[ib]
        w = cot_c[:, c, None] * du
        _scatter(grad, ib, w)
        _scatter(grad, ia, -w)
        q = np.einsum("ij,ij->i", du, v[ib] - v[ia])
        q = np.where(clamped[:, c], 0.0, q)
        gc, ga, gb = _cot_grad(v[ic], v[ia], v[ib])
        _scatter(grad, ic, q[:, None] * gc)
        _scatter(grad, ia, q[:, None] * ga)
        _scatter(grad, ib, q[:, None] * gb)

    # mixed-area part: sum_i s_i . A_i
    _, branch = mixed_area_terms(mesh)
    _, l2, dbl, cot = face_geometry(mesh)
    p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    cr = np.cross(p1 - p0, p2 - p0)
    dbl_safe = np.where(dbl > 0, dbl, 1.0)
    ch = cr / dbl_safe[:, None]
    for c in range(3):
        j, k = (c + 1) % 3, (c + 2) % 3
        ii, ij, ik = f[:, c], f[:, j], f[:, k]
        si = s[ii]
        vor = branch[:, c] == 0
        coef = np.where(vor, si / 8.0, 0.0)
        xi, xj, xk = v[ii], v[ij], v[ik]
        # |x_j - x_i|^2 cot_k + |x_k - x_i|^2 cot_j
        w = (coef * 2 * cot[:, k])[:, None] * (xj - xi)
        _scatter(grad, ij, w)
        _scatter(grad, ii, -w)
        w = (coef * 2 * cot[:, j])[:, None] * (xk - xi)
        _scatter(grad, ik, w)
        _scatter(grad, ii, -w)
        # cot_k is the angle at k between (x_c - x_k) and (x_j - x_k)
        g_k, g_c, g_j = _cot_grad(xk, xi, xj)
        ck = (coef * l2[:, k])[:, None]
        _scatter(grad, ik, ck * g_k)
        _scatter(grad, ii, ck * g_c)
        _scatter(grad, ij, ck * g_j)
        g_j2, g_k2, g_c2 = _cot_grad(xj, xk, xi)
        cj = (coef * l2[:, j])[:, None]
        _scatter(grad, ij, cj * g_j2)
        _scatter(grad, ik, cj * g_k2)
        _scatter(grad, ii, cj * g_c2)
        # obtuse faces: area/2 at the obtuse corner, area/4 elsewhere;
        # d(area) = 0.5 * d|cross|
        frac = np.where(branch[:, c] == 1, 0.5, np.where(branch[:, c] == 2, 0.25, 0.0))
        wa = (si * frac * 0.5)[:, None] * ch
        wa[dbl == 0] = 0.0
        e1, e2 = p1 - p0, p2 - p0
        g1 = np.cross(e2, wa)
        g2 = np.cross(wa, e1)
        _scatter(grad, f[:, 1], g1)
        _scatter(grad, f[:, 2], g2)
        _scatter(grad, f[:, 0], -(g1 + g2))
    return grad


def uniform_laplacian_curvature(mesh):
    """Average of ``x_j - x_i`` over the edge neighbours (cm)."""
    adj = mesh.topology.adjacency
    deg = mesh.topology.degree
    summed = adj @ mesh.vertices - deg[:, None] * mesh.vertices
    isolated = deg == 0
    values = np.zeros_like(summed)
    values[~isolated] = summed[~isolated] / deg[~isolated, None]
    return CurvatureField("uniform_laplacian", values, mesh.boundary_vertices.copy(), isolated)


def knn_neighborhoods(mesh, k, index=None):
    """Indices (n, k) of each vertex's K spatial nearest vertices, itself included."""
    pts = getattr(mesh, "vertices", mesh)
    if k > len(pts):
        raise KTooLarge(f"K={k} exceeds vertex count {len(pts)}")
    if index is None:
        index = PointIndex(pts)
    idx, _ = index.query(pts, k)
    return idx


def covariances(points, neighbors):
    """Per-row neighbourhood mean (n, 3) and covariance (n, 3, 3), normalized by K."""
    g = points[neighbors]
    mean = g.mean(axis=1)
    c = g - mean[:, None, :]
    cov = np.einsum("nka,nkb->nab", c, c) / neighbors.shape[1]
    return mean, cov


def neighborhood_covariance(mesh, vertex, k):
    """Covariance of the K spatial nearest neighbours of one vertex, and their mean."""
    pts = getattr(mesh, "vertices", mesh)
    if k > len(pts):
        raise KTooLarge(f"K={k} exceeds vertex count {len(pts)}")
    idx, _ = PointIndex(pts).query(pts[vertex], k)
    mean, cov = covariances(np.asarray(pts), idx)
    return cov[0], mean[0]


def eigen_curvature(mesh, k, neighbors=None):
    """Sorted covariance eigenvalues per vertex (diagnostic, not differentiated)."""
    if neighbors is None:
        neighbors = knn_neighborhoods(mesh, k)
    _, cov = covariances(mesh.vertices, neighbors)
    vals = np.linalg.eigvalsh(cov)
    n = mesh.n_vertices
    return CurvatureField("eigen", vals, np.zeros(n, dtype=bool), np.zeros(n, dtype=bool), k=k)


def rq_skip_threshold(mesh):
    return RQ_SKIP_RTOL * average_edge_length(mesh) ** 2


def rayleigh_quotients(points, neighbors, skip_sq):
    """RQ of every centred neighbour against its neighbourhood covariance.

    Returns ``(rq, usable, mean, cov, centred)``; ``rq`` is (n, K) with
    unusable (near-mean) entries set to NaN.
    """
    mean, cov = covariances(points, neighbors)
    c = points[neighbors] - mean[:, None, :]
    den = np.einsum("nka,nka->nk", c, c)
    num = np.einsum("nka,nab,nkb->nk", c, cov, c)
    usable = den > skip_sq
    rq = np.full(den.shape, np.nan)
    rq[usable] = num[usable] / den[usable]
    return rq, usable, mean, cov, c


def rayleigh_curvature(mesh, k, neighbors=None):
    """Minimum and maximum Rayleigh quotient over each vertex's K-neighbourhood (cm^2).

    Neighbours closer to the neighbourhood mean than the skip threshold are
    ignored; vertices with no usable neighbour are flagged degenerate and
    get ``(0, 0)``. ``extras`` records the selected neighbour slots.
    """
    if neighbors is None:
        neighbors = knn_neighborhoods(mesh, k)
    k = neighbors.shape[1]
    rq, usable, *_ = rayleigh_quotients(mesh.vertices, neighbors, rq_skip_threshold(mesh))
    degenerate = ~usable.any(axis=1)
    lo = np.where(usable, rq, np.inf)
    hi = np.where(usable, rq, -np.inf)
    arg_min = np.argmin(lo, axis=1)
    arg_max = np.argmax(hi, axis=1)
    rows = np.arange(len(rq))
    values = np.stack([lo[rows, arg_min], hi[rows, arg_max]], axis=1)
    values[degenerate] = 0.0
    n = mesh.n_vertices
    return CurvatureField("rayleigh", values, np.zeros(n, dtype=bool), degenerate, k=k,
                          extras={"arg_min": arg_min, "arg_max": arg_max, "neighbors": neighbors})


def rayleigh_vjp(mesh, neighbors, slot, weight):
    """Gradient of ``sum_i weight_i * RQ(Sigma_i, g_{i, slot_i})`` w.r.t. positions.

    ``slot`` picks one neighbour per vertex (the frozen argmin/argmax);
    rows with zero weight are ignored. Differentiates through the
    neighbourhood mean, the covariance and the quotient.
    """
    pts = mesh.vertices
    kk = neighbors.shape[1]
    rows = np.flatnonzero(weight != 0)
    grad = np.zeros_like(pts)
    if len(rows) == 0:
        return grad
    nbr = neighbors[rows]
    w = weight[rows]
    mean, cov = covariances(pts, nbr)
    c = pts[nbr] - mean[:, None, :]
    sel = slot[rows]
    g = c[np.arange(len(rows)), sel]
    gg = np.einsum("na,na->n", g, g)
    sg = np.einsum("nab,nb->na", cov, g)
    rq = np.einsum("na,na->n", g, sg) / gg
    # d/dg of the quotient with the covariance held fixed
    dg = (2 * sg - 2 * rq[:, None] * g) / gg[:, None]
    # covariance part: (2/K) S (x_l - mean) with S = g g^T / gg
    proj = np.einsum("nka,na->nk", c, g) / gg[:, None]
    dcov = (2.0 / kk) * proj[:, :, None] * g[:, None, :]
    contrib = dcov - dg[:, None, :] / kk
    contrib[np.arange(len(rows)), sel] += dg
    contrib *= w[:, None, None]
    flat_idx = nbr.ravel()
    flat = contrib.reshape(-1, 3)
    for a in range(3):
        grad[:, a] += np.bincount(flat_idx, weights=flat[:, a], minlength=len(pts))
    return grad
