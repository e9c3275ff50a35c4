"""Deterministic synthetic meshes: grids, spheres, tubes, capsules and draped patches.

The capsule stands in for a body and the cylindrical patch for a garment
piece; together they give controllable interpenetration scenes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .mesh import TriMesh


def _grid_faces(nx, ny, wrap_x=False):
    faces = []
    cols = nx if wrap_x else nx - 1
    for j in range(ny - 1):
        for i in range(cols):
            i1 = (i + 1) % nx
            a = j * nx + i
            b = j * nx + i1
            c = (j + 1) * nx + i1
            d = (j + 1) * nx + i
            faces.append((a, b, c))
            faces.append((a, c, d))
    return np.array(faces, dtype=np.int64)


def _staggered_faces(nx, ny, wrap_x=False):
    # odd rows sit half a step to the right of even rows
    faces = []
    cols = nx if wrap_x else nx - 1
    for j in range(ny - 1):
        for i in range(cols):
            i1 = (i + 1) % nx
            l0, l1 = j * nx + i, j * nx + i1
            u0, u1 = (j + 1) * nx + i, (j + 1) * nx + i1
            if j % 2 == 0:
                faces.append((l0, l1, u0))
                faces.append((l1, u1, u0))
            else:
                faces.append((l0, u1, u0))
                faces.append((l0, l1, u1))
    return np.array(faces, dtype=np.int64)


def plane_grid(nx, ny, edge=1.0, equilateral=False, jitter=0.0, seed=0):
    """Flat ``nx`` x ``ny`` vertex grid in z=0 with outward normal +z.

    With ``equilateral=True`` odd rows are shifted by half an edge and rows
    are ``sqrt(3)/2`` apart, giving unit-edge equilateral triangles.
    ``jitter`` moves every vertex in-plane by a seeded uniform offset of up
    to ``jitter * edge`` per axis, which removes the exact distance ties of
    a regular lattice.
    """
    if nx < 2 or ny < 2:
        raise ConfigError("grid needs at least 2 x 2 vertices")
    if equilateral:
        j, i = np.mgrid[0:ny, 0:nx]
        x = (i + 0.5 * (j % 2)) * edge
        y = j * edge * np.sqrt(3) / 2
        faces = _staggered_faces(nx, ny)
    else:
        j, i = np.mgrid[0:ny, 0:nx]
        x = i * edge
        y = j * edge
        faces = _grid_faces(nx, ny)
    v = np.stack([x.ravel(), y.ravel(), np.zeros(nx * ny)], axis=1).astype(np.float64)
    if jitter:
        rng = np.random.default_rng(seed)
        v[:, :2] += rng.uniform(-jitter, jitter, size=(len(v), 2)) * edge
    return TriMesh(v, faces)


def wrinkled_plane(nx, ny, edge=1.0, amplitude=0.3, wavelength=4.0, axis="x", equilateral=False,
                   jitter=0.0, seed=0):
    """Plane grid displaced by ``amplitude * sin(2 pi u / wavelength)`` along z.

    Grid arguments match :func:`plane_grid`, so ``plane_grid`` with the same
    ``jitter``/``seed`` is the flat counterpart vertex for vertex.
    """
    if amplitude < 0:
        raise ConfigError("amplitude must be >= 0")
    base = plane_grid(nx, ny, edge, equilateral, jitter, seed)
    v = base.vertices.copy()
    u = v[:, 0] if axis == "x" else v[:, 1]
    v[:, 2] = amplitude * np.sin(2 * np.pi * u / wavelength)
    return base.with_vertices(v)


_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(subdiv=3, radius=1.0):
    """Subdivided icosahedron projected onto a sphere; ``10 * 4**subdiv + 2`` vertices."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    faces = list(_ICO_FACES)
    for _ in range(subdiv):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    pts = np.array(v) * radius
    return TriMesh(pts, np.array(faces, dtype=np.int64))


def cylinder(n_circ=64, n_len=20, radius=1.0, length=None, stagger=True):
    """Open tube around the z axis, ``n_circ`` vertices per ring and ``n_len`` rings.

    By default rings are spaced so that staggered triangles are close to
    equilateral; pass ``length`` to override.
    """
    if n_circ < 3 or n_len < 2:
        raise ConfigError("cylinder needs n_circ >= 3 and n_len >= 2")
    step = 2 * np.pi / n_circ
    if length is None:
        length = (n_len - 1) * radius * step * (np.sqrt(3) / 2 if stagger else 1.0)
    z = np.linspace(0.0, length, n_len)
    pts = []
    for j in range(n_len):
        off = 0.5 * step if stagger and j % 2 else 0.0
        th = np.arange(n_circ) * step + off
        pts.append(np.stack([radius * np.cos(th), radius * np.sin(th), np.full(n_circ, z[j])], axis=1))
    faces = _staggered_faces(n_circ, n_len, wrap_x=True) if stagger else _grid_faces(n_circ, n_len, wrap_x=True)
    return TriMesh(np.concatenate(pts), faces)


def capsule(radius=1.0, length=2.0, res=32):
    """Closed capsule along z: a tube of ``length`` capped by two hemispheres."""
    if res < 4:
        raise ConfigError("capsule res must be >= 4")
    n = res
    n_lat = max(res // 4, 1)
    step = 2 * np.pi / n
    th = np.arange(n) * step
    rings = []
    for k in range(1, n_lat + 1):
        phi = -np.pi / 2 + k * (np.pi / 2) / n_lat
        rings.append((radius * np.cos(phi), -length / 2 + radius * np.sin(phi)))
    n_cyl = max(int(round(length / (radius * step))), 1)
    for k in range(1, n_cyl):
        rings.append((radius, -length / 2 + k * length / n_cyl))
    for k in range(0, n_lat):
        phi = k * (np.pi / 2) / n_lat
        rings.append((radius * np.cos(phi), length / 2 + radius * np.sin(phi)))
    pts = [np.array([0.0, 0.0, -length / 2 - radius])]
    for rr, zz in rings:
        pts.append(np.stack([rr * np.cos(th), rr * np.sin(th), np.full(n, zz)], axis=1))
    pts.append(np.array([0.0, 0.0, length / 2 + radius]))
    v = np.vstack(pts)
    top = len(v) - 1
    faces = []
    for i in range(n):
        faces.append((0, 1 + (i + 1) % n, 1 + i))
    for r in range(len(rings) - 1):
        lo, hi = 1 + r * n, 1 + (r + 1) * n
        for i in range(n):
            i1 = (i + 1) % n
            faces.append((lo + i, lo + i1, hi + i1))
            faces.append((lo + i, hi + i1, hi + i))
    last = 1 + (len(rings) - 1) * n
    for i in range(n):
        faces.append((top, last + i, last + (i + 1) % n))
    return TriMesh(v, np.array(faces, dtype=np.int64))


def cloth_patch(radius, nx=5, ny=5, edge=0.5, gap=0.0):
    """Cylindrical grid patch at distance ``radius + gap`` from the z axis, centred on +x.

    Negative ``gap`` places the patch inside a body of the given radius.
    """
    if nx < 2 or ny < 2:
        raise ConfigError("patch needs at least 2 x 2 vertices")
    rr = radius + gap
    j, i = np.mgrid[0:ny, 0:nx]
    th = (i.ravel() - (nx - 1) / 2) * edge / radius
    z = (j.ravel() - (ny - 1) / 2) * edge
    v = np.stack([rr * np.cos(th), rr * np.sin(th), z], axis=1)
    return TriMesh(v, _grid_faces(nx, ny))


def capsule_drape(body=None, cloth=None, gap=0.0):
    """Capsule body and a cloth patch hovering ``gap`` cm over its side (inside if negative)."""
    body = dict(body or {})
    cloth = dict(cloth or {})
    r = float(body.get("radius", 10.0))
    b = capsule(r, float(body.get("length", 40.0)), int(body.get("res", 48)))
    c = cloth_patch(r, int(cloth.get("nx", 5)), int(cloth.get("ny", 5)),
                    float(cloth.get("edge", 1.0)), gap)
    return b, c


_GENERATORS = {
    "planeGrid": plane_grid,
    "icosphere": icosphere,
    "cylinder": cylinder,
    "capsule": capsule,
    "wrinkledPlane": wrinkled_plane,
    "capsuleDrape": capsule_drape,
}

# snake_case spellings accepted in spec files
_ALIASES = {
    "plane_grid": "planeGrid", "wrinkled_plane": "wrinkledPlane",
    "capsule_drape": "capsuleDrape",
}


@dataclass(frozen=True)
class SceneSpec:
    """Generator name, its keyword parameters and a seed for optional jitter.

    ``params['noise']`` (cm, default 0) adds seeded Gaussian jitter to every
    generated vertex.
    """

    generator: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_mapping(cls, data):
        data = dict(data)
        gen = data.pop("generator", None)
        if gen is None:
            raise ConfigError("scene spec needs a 'generator' key")
        seed = int(data.pop("seed", 0))
        params = dict(data.pop("params", {}))
        params.update(data)
        return cls(_ALIASES.get(gen, gen), params, seed)


def generate(spec):
    """Build the mesh (or ``(body, cloth)`` pair for capsuleDrape) described by ``spec``."""
    if isinstance(spec, dict):
        spec = SceneSpec.from_mapping(spec)
    name = _ALIASES.get(spec.generator, spec.generator)
    if name not in _GENERATORS:
        raise ConfigError(f"unknown generator {spec.generator!r}; choose from {sorted(_GENERATORS)}")
    params = dict(spec.params)
    noise = float(params.pop("noise", 0.0))
    try:
        out = _GENERATORS[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from None
    if noise > 0:
        rng = np.random.default_rng(spec.seed)
        meshes = out if isinstance(out, tuple) else (out,)
        meshes = tuple(m.with_vertices(m.vertices + rng.normal(scale=noise, size=m.vertices.shape))
                       for m in meshes)
        out = meshes if isinstance(out, tuple) else meshes[0]
    return out


__all__ = [
    "SceneSpec", "generate", "plane_grid", "wrinkled_plane", "icosphere", "cylinder",
    "capsule", "cloth_patch", "capsule_drape",
]
