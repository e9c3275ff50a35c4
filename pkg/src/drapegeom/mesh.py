"""Triangle mesh container with cached topology, normals and vertex areas.

Topology (edges, one-rings, two-edge pairs, boundary flags) depends only on
the face list and is shared between meshes produced by
:meth:`TriMesh.with_vertices`, so re-evaluating geometry during refinement
never rebuilds adjacency.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import DegenerateTriangle, IndexOutOfRange, MeshWarning, NoEdges

logger = logging.getLogger(__name__)

# relative to avg_edge_length**2
ZERO_AREA_RTOL = 1e-12


@dataclass(frozen=True)
class ValidationSummary:
    """Non-fatal findings gathered while building a mesh."""

    zero_area_faces: tuple
    nonmanifold_edges: int
    inconsistent_orientation_edges: int
    boundary_edges: int
    isolated_vertices: tuple

    @property
    def clean(self):
        return not (self.zero_area_faces or self.nonmanifold_edges
                    or self.inconsistent_orientation_edges or self.isolated_vertices)

    def as_dict(self):
        return {
            "zero_area_faces": len(self.zero_area_faces),
            "nonmanifold_edges": self.nonmanifold_edges,
            "inconsistent_orientation_edges": self.inconsistent_orientation_edges,
            "boundary_edges": self.boundary_edges,
            "isolated_vertices": len(self.isolated_vertices),
        }


class Topology:
    """Connectivity tables derived from a face list.

    Attributes
    ----------
    edges : ndarray (E, 2)
        Unique undirected edges, ``edges[:, 0] < edges[:, 1]``, sorted.
    face_edges : ndarray (F, 3)
        ``face_edges[f, c]`` is the edge opposite corner ``c`` of face ``f``.
    edge_face_count : ndarray (E,)
    adjacency : csr_matrix (n, n)
        Symmetric 0/1 vertex adjacency.
    two_edge_pairs : ndarray (P, 2)
        Unordered pairs at graph distance exactly two, ``i < k``.
    boundary_vertices : ndarray (n,) of bool
        Vertices touching an edge that is not shared by exactly two faces.
    """

    def __init__(self, faces, n_vertices):
        self.faces = faces
        self.n_vertices = n_vertices
        nf = len(faces)

        # corner c -> opposite edge (c+1, c+2)
        a = faces[:, [1, 2, 0]].ravel()
        b = faces[:, [2, 0, 1]].ravel()
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        keys = lo.astype(np.int64) * n_vertices + hi
        uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
        self.edges = np.stack([uniq // n_vertices, uniq % n_vertices], axis=1)
        self.face_edges = inverse.reshape(nf, 3)
        self.edge_face_count = counts

        directed = a.astype(np.int64) * n_vertices + b
        _, dcounts = np.unique(directed, return_counts=True)
        self.inconsistent_orientation_edges = int(np.sum(dcounts > 1))

        e0, e1 = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(self.edges), dtype=np.int64)
        adj = sparse.coo_matrix(
            (data, (np.concatenate([e0, e1]), np.concatenate([e1, e0]))),
            shape=(n_vertices, n_vertices),
        ).tocsr()
        adj.sum_duplicates()
        adj.data[:] = 1
        self.adjacency = adj

        boundary = np.zeros(n_vertices, dtype=bool)
        bad = counts != 2
        boundary[e0[bad]] = True
        boundary[e1[bad]] = True
        self.boundary_vertices = boundary

        vf_rows = faces.ravel()
        vf_cols = np.repeat(np.arange(nf), 3)
        self.vertex_faces = sparse.csr_matrix(
            (np.ones(3 * nf, dtype=np.int8), (vf_rows, vf_cols)), shape=(n_vertices, nf)
        )
        self.degree = np.diff(adj.indptr)

    @cached_property
    def two_edge_pairs(self):
        adj = self.adjacency
        reach = (adj @ adj).tocoo()
        i, k = reach.row, reach.col
        keep = i < k
        i, k = i[keep], k[keep]
        # drop pairs that are also direct neighbours
        direct = np.asarray(adj[i, k]).ravel() if len(i) else np.zeros(0)
        keep = direct == 0
        pairs = np.stack([i[keep], k[keep]], axis=1).astype(np.int64)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]

    def one_ring(self, i):
        adj = self.adjacency
        return adj.indices[adj.indptr[i]:adj.indptr[i + 1]].copy()

    def incident_faces(self, i):
        vf = self.vertex_faces
        return np.sort(vf.indices[vf.indptr[i]:vf.indptr[i + 1]])


class TriMesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : array_like (n, 3)
        Positions in cm.
    faces : array_like (m, 3)
        Vertex indices, counter-clockwise seen from the outside.
    topology : Topology, optional
        Reused connectivity; only passed internally by :meth:`with_vertices`.
    """

    def __init__(self, vertices, faces, topology=None):
        v = np.array(vertices, dtype=np.float64)
        f = np.array(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must have shape (n, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("faces must have shape (m, 3)")
        v.setflags(write=False)
        f.setflags(write=False)
        self.vertices = v
        self.faces = f
        self.topology = topology if topology is not None else Topology(f, len(v))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def edges(self):
        return self.topology.edges

    @property
    def boundary_vertices(self):
        return self.topology.boundary_vertices

    @property
    def interior_vertices(self):
        return ~self.topology.boundary_vertices & (self.topology.degree > 0)

    def with_vertices(self, vertices):
        """Same connectivity, new positions."""
        v = np.asarray(vertices, dtype=np.float64)
        if v.shape != self.vertices.shape:
            raise ValueError(f"expected vertices of shape {self.vertices.shape}, got {v.shape}")
        return TriMesh(v, self.faces, topology=self.topology)

    def same_topology(self, other):
        return (self.n_vertices == other.n_vertices
                and self.faces.shape == other.faces.shape
                and np.array_equal(self.faces, other.faces))

    @cached_property
    def validation(self):
        topo = self.topology
        areas = face_areas(self)
        tol = ZERO_AREA_RTOL * average_edge_length(self) ** 2 if len(topo.edges) else 0.0
        zero = tuple(int(i) for i in np.flatnonzero(areas <= tol))
        isolated = tuple(int(i) for i in np.flatnonzero(topo.degree == 0))
        return ValidationSummary(
            zero_area_faces=zero,
            nonmanifold_edges=int(np.sum(topo.edge_face_count > 2)),
            inconsistent_orientation_edges=topo.inconsistent_orientation_edges,
            boundary_edges=int(np.sum(topo.edge_face_count == 1)),
            isolated_vertices=isolated,
        )

    def __repr__(self):
        return f"TriMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"


def build_mesh(positions, triangle_indices, warn=True):
    """Validate indices and build a :class:`TriMesh`.

    Raises :class:`IndexOutOfRange` or :class:`DegenerateTriangle`; zero-area
    faces and non-manifold edges only produce a :class:`MeshWarning` and are
    recorded in ``mesh.validation``.
    """
    v = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(triangle_indices)
    if f.size == 0:
        raise ValueError("mesh needs at least one triangle")
    f = f.reshape(-1, 3)
    if not np.issubdtype(f.dtype, np.integer):
        if not np.all(np.equal(np.mod(f, 1), 0)):
            raise IndexOutOfRange("triangle indices must be integers")
        f = f.astype(np.int64)
    if f.min() < 0 or f.max() >= len(v):
        bad = np.flatnonzero((f < 0).any(axis=1) | (f >= len(v)).any(axis=1))
        raise IndexOutOfRange(
            f"triangle {int(bad[0])} references a vertex outside [0, {len(v)})"
        )
    rep = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    if rep.any():
        k = int(np.flatnonzero(rep)[0])
        raise DegenerateTriangle(f"triangle {k} has a repeated index: {tuple(int(x) for x in f[k])}")
    mesh = TriMesh(v, f)
    summary = mesh.validation
    if warn and not summary.clean:
        msg = ", ".join(f"{k}={val}" for k, val in summary.as_dict().items()
                        if val and k != "boundary_edges")
        warnings.warn(f"mesh validation: {msg}", MeshWarning, stacklevel=2)
    return mesh


@dataclass(frozen=True)
class NeighborhoodTables:
    """Per-vertex neighbourhoods used by the curvature operators and bending term.

    ``edge_opposite_angles[e]`` holds the (alpha, beta) angles opposite edge
    ``e``; beta is NaN on boundary edges.
    """

    one_ring: list
    face_ring: list
    corner_angles: np.ndarray
    edge_opposite_angles: np.ndarray
    two_edge_pairs: np.ndarray


def neighborhood_tables(mesh):
    topo = mesh.topology
    angles = corner_angles(mesh)
    opp = np.full((len(topo.edges), 2), np.nan)
    slot = np.zeros(len(topo.edges), dtype=np.int64)
    for f in range(mesh.n_faces):
        for c in range(3):
            e = topo.face_edges[f, c]
            if slot[e] < 2:
                opp[e, slot[e]] = angles[f, c]
            slot[e] += 1
    return NeighborhoodTables(
        one_ring=[topo.one_ring(i) for i in range(mesh.n_vertices)],
        face_ring=[topo.incident_faces(i) for i in range(mesh.n_vertices)],
        corner_angles=angles,
        edge_opposite_angles=opp,
        two_edge_pairs=topo.two_edge_pairs,
    )


def _corners(mesh):
    v = mesh.vertices
    f = mesh.faces
    return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]


def face_cross(mesh):
    """Unnormalized CCW face normals, ``(x1 - x0) x (x2 - x0)``."""
    p0, p1, p2 = _corners(mesh)
    return np.cross(p1 - p0, p2 - p0)


def face_areas(mesh):
    return 0.5 * np.linalg.norm(face_cross(mesh), axis=1)


def facet_normals(mesh, return_flags=False):
    """Unit face normals; zero-area faces get a zero vector and are flagged."""
    c = face_cross(mesh)
    norm = np.linalg.norm(c, axis=1)
    ok = norm > 0
    if len(mesh.edges):
        ok &= 0.5 * norm > ZERO_AREA_RTOL * average_edge_length(mesh) ** 2
    n = np.zeros_like(c)
    n[ok] = c[ok] / norm[ok, None]
    if return_flags:
        return n, ~ok
    return n


def corner_angles(mesh):
    """Interior angle (radians) at every corner, shape (F, 3)."""
    p = _corners(mesh)
    out = np.empty((mesh.n_faces, 3))
    for c in range(3):
        a = p[(c + 1) % 3] - p[c]
        b = p[(c + 2) % 3] - p[c]
        out[:, c] = np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), np.einsum("ij,ij->i", a, b))
    return out


def vertex_normals(mesh, return_flags=False):
    """Angle-weighted vertex normals.

    Isolated vertices (and vertices whose incident faces all have zero area)
    get a zero vector and are flagged.
    """
    fn = facet_normals(mesh)
    ang = corner_angles(mesh)
    acc = np.zeros((mesh.n_vertices, 3))
    for c in range(3):
        np.add.at(acc, mesh.faces[:, c], fn * ang[:, c, None])
    norm = np.linalg.norm(acc, axis=1)
    ok = norm > 0
    out = np.zeros_like(acc)
    out[ok] = acc[ok] / norm[ok, None]
    if return_flags:
        return out, ~ok
    return out


def mixed_area_terms(mesh):
    """Per-corner mixed-area contributions and the branch taken.

    Returns ``(contrib, branch)`` with shape (F, 3). ``branch`` is 0 for the
    Voronoi rule (non-obtuse face), 1 for the obtuse corner (area/2) and 2
    for the other corners of an obtuse face (area/4).
    """
    p = _corners(mesh)
    dots = np.empty((mesh.n_faces, 3))
    l2 = np.empty((mesh.n_faces, 3))
    for c in range(3):
        a = p[(c + 1) % 3] - p[c]
        b = p[(c + 2) % 3] - p[c]
        dots[:, c] = np.einsum("ij,ij->i", a, b)
        d = p[(c + 2) % 3] - p[(c + 1) % 3]
        l2[:, c] = np.einsum("ij,ij->i", d, d)
    dbl = np.linalg.norm(face_cross(mesh), axis=1)
    area = 0.5 * dbl
    with np.errstate(divide="ignore", invalid="ignore"):
        cot = dots / dbl[:, None]
    obtuse_at = dots < 0
    obtuse = obtuse_at.any(axis=1)
    contrib = np.empty((mesh.n_faces, 3))
    branch = np.zeros((mesh.n_faces, 3), dtype=np.int8)
    for c in range(3):
        j, k = (c + 1) % 3, (c + 2) % 3
        # edge c-j is opposite corner k, edge c-k opposite corner j
        vor = (l2[:, k] * cot[:, k] + l2[:, j] * cot[:, j]) / 8.0
        contrib[:, c] = np.where(obtuse, np.where(obtuse_at[:, c], area / 2, area / 4), vor)
        branch[:, c] = np.where(obtuse, np.where(obtuse_at[:, c], 1, 2), 0)
    contrib[dbl == 0] = 0.0
    return contrib, branch


def mixed_area(mesh):
    """Meyer mixed Voronoi area per vertex (cm^2); sums to the surface area."""
    contrib, _ = mixed_area_terms(mesh)
    out = np.zeros(mesh.n_vertices)
    for c in range(3):
        out += np.bincount(mesh.faces[:, c], weights=contrib[:, c], minlength=mesh.n_vertices)
    return out


def edge_lengths(mesh):
    e = mesh.edges
    return np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)


def average_edge_length(mesh):
    if len(mesh.edges) == 0:
        raise NoEdges("mesh has no edges")
    return float(np.mean(edge_lengths(mesh)))
