import numpy as np
import pytest

from drapegeom.errors import ConfigError
from drapegeom.scenes import SceneSpec, capsule_drape, cylinder, generate, icosphere, plane_grid, wrinkled_plane


def test_plane_grid_counts():
    g = plane_grid(3, 3, 1.0)
    assert g.n_vertices == 9 and g.n_faces == 8
    assert np.allclose(g.vertices[:, 2], 0)


def test_icosphere_counts_radius():
    s = icosphere(3, 1.0)
    assert s.n_vertices == 642
    assert np.abs(np.linalg.norm(s.vertices, axis=1) - 1).max() <= 1e-12
    assert icosphere(4).n_vertices == 2562


def test_zero_amplitude_is_plane():
    a = wrinkled_plane(6, 5, amplitude=0.0, jitter=0.1, seed=3)
    b = plane_grid(6, 5, jitter=0.1, seed=3)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.faces, b.faces)


def test_wrinkle_profile():
    w = wrinkled_plane(17, 5, edge=1.0, amplitude=0.3, wavelength=4.0)
    assert np.allclose(w.vertices[:, 2], 0.3 * np.sin(2 * np.pi * w.vertices[:, 0] / 4.0))


def test_deterministic_jitter():
    assert np.array_equal(plane_grid(6, 6, jitter=0.2, seed=1).vertices,
                          plane_grid(6, 6, jitter=0.2, seed=1).vertices)
    assert not np.array_equal(plane_grid(6, 6, jitter=0.2, seed=1).vertices,
                              plane_grid(6, 6, jitter=0.2, seed=2).vertices)


def test_cylinder_radius():
    c = cylinder(32, 8, radius=2.0)
    assert np.allclose(np.linalg.norm(c.vertices[:, :2], axis=1), 2.0)


def test_generate_spec():
    m = generate({"generator": "plane_grid", "nx": 4, "ny": 3})
    assert m.n_vertices == 12
    body, cloth = generate(SceneSpec("capsuleDrape", {"gap": 1.0}))
    assert cloth.n_vertices == 25
    a = generate({"generator": "icosphere", "subdiv": 1, "noise": 0.01, "seed": 4})
    b = generate({"generator": "icosphere", "subdiv": 1, "noise": 0.01, "seed": 4})
    assert np.array_equal(a.vertices, b.vertices)
    with pytest.raises(ConfigError):
        generate({"generator": "torus"})
    with pytest.raises(ConfigError):
        generate({"generator": "icosphere", "bogus": 1})
    with pytest.raises(ConfigError):
        generate({"nx": 3})


def test_capsule_drape_gap():
    body, cloth = capsule_drape(gap=1.5)
    r = np.linalg.norm(cloth.vertices[:, :2], axis=1)
    assert np.allclose(r, 11.5)
