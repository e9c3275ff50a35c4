import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from drapegeom.cli import main
from drapegeom.io import read_ply, save_mesh
from drapegeom.scenes import capsule_drape, icosphere, plane_grid, wrinkled_plane


@pytest.fixture
def meshes(tmp_path):
    a = tmp_path / "a.obj"
    b = tmp_path / "b.ply"
    save_mesh(a, wrinkled_plane(8, 8, jitter=0.1))
    save_mesh(b, plane_grid(8, 8, jitter=0.1), float64=True)
    return a, b


def run(argv, capsys):
    code = main([str(x) for x in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_loss_identical_meshes(meshes, tmp_path, capsys):
    a, _ = meshes
    r = tmp_path / "r.json"
    code, _, _ = run(["loss", a, a, "--recipe", "p", "--json", r], capsys)
    assert code == 0
    rep = json.loads(r.read_text())
    assert rep["tool"] == "drapegeom" and rep["command"] == "loss"
    assert set(rep["result"]["per_term"]) == {"vert", "norm", "bend"}
    assert all(v == 0 for v in rep["result"]["per_term"].values())


def test_default_weights_in_report(meshes, capsys):
    a, b = meshes
    code, out, _ = run(["loss", b, a, "--recipe", "mcrq"], capsys)
    assert code == 0
    w = json.loads(out)["config"]["weights"]
    assert (w["lambda_norm"], w["lambda_pen"], w["lambda_bend"], w["d_tol_cm"]) == (0.3, 1.0, 0.5, 0.05)
    assert json.loads(out)["result"]["total"] > 0


def test_weights_file(meshes, tmp_path, capsys):
    a, b = meshes
    wf = tmp_path / "w.toml"
    wf.write_text("[weights]\nlambda_norm = 0.0\nlambda_bend = 0.0\n")
    _, out, _ = run(["loss", b, a, "--weights", wf], capsys)
    rep = json.loads(out)
    assert rep["result"]["total"] == pytest.approx(rep["result"]["per_term"]["vert"])


def test_exit_codes(meshes, tmp_path, capsys):
    a, _ = meshes
    code, _, err = run(["loss", tmp_path / "missing.obj", a], capsys)
    assert code == 2 and "error" in err
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
    assert run(["loss", bad, a], capsys)[0] == 2
    other = tmp_path / "o.obj"
    save_mesh(other, plane_grid(3, 3))
    code, _, err = run(["loss", other, a], capsys)
    assert code == 1 and "invalid input" in err


def test_gradcheck_rq(tmp_path, capsys):
    r = tmp_path / "g.json"
    code, _, err = run(["gradcheck", "--term", "rq", "--trials", "30", "--h", "1e-6", "--seed", "7",
                        "--json", r], capsys)
    rep = json.loads(r.read_text())
    assert rep["result"]["max_rel_error"] <= 1e-5
    assert code == 0 and rep["result"]["passed"] is True


def test_gradcheck_fails_with_tight_tol(capsys):
    code, _, _ = run(["gradcheck", "--term", "bend", "--trials", "3", "--tol", "1e-30"], capsys)
    assert code == 1


def test_curvature_outputs(tmp_path, capsys):
    m = tmp_path / "s.ply"
    save_mesh(m, icosphere(3), float64=True)
    out = tmp_path / "k.ply"
    code, stdout, _ = run(["curvature", m, "--metric", "mean", "--out", out, "--plot", "--json", "-"],
                          capsys)
    assert code == 0
    rep = json.loads(stdout)
    assert rep["result"]["mean"] == pytest.approx(2.0, rel=0.05)
    assert (tmp_path / "k.png").stat().st_size > 0
    _, fields = read_ply(out)
    assert "kmc_norm" in fields
    csv_out = tmp_path / "k.csv"
    assert run(["curvature", m, "--metric", "rq", "--k", "8", "--out", csv_out], capsys)[0] == 0
    assert csv_out.read_text().startswith("vertex_index,x,y,z,rq_min,rq_max,valid")


def test_metrics_curve_and_figures(meshes, tmp_path, capsys):
    a, b = meshes
    curve = tmp_path / "c.csv"
    code, out, _ = run(["metrics", b, a, "--curve", curve, "--plot"], capsys)
    assert code == 0
    rep = json.loads(out)["result"]
    assert rep["e_dist_cm"] > 0
    rows = list(csv.reader(open(curve)))
    assert rows[0] == ["kind", "threshold", "fraction_below"]
    assert (tmp_path / "c_distance.png").exists() and (tmp_path / "c_angle.png").exists()


def test_refine_roundtrip_config(meshes, tmp_path, capsys):
    a, b = meshes
    out = tmp_path / "o.ply"
    r1 = tmp_path / "r1.json"
    trace = tmp_path / "t.csv"
    code, _, _ = run(["refine", b, a, "--steps", "20", "--out", out, "--trace", trace, "--plot",
                      "--json", r1], capsys)
    assert code == 0
    assert (tmp_path / "t.png").exists()
    rep = json.loads(r1.read_text())
    assert rep["config"]["refine"]["steps"] == 20
    assert rep["config"]["pooling"] == {"k": 15, "downsample_factor": 10}
    r2 = tmp_path / "r2.json"
    out2 = tmp_path / "o2.ply"
    assert run(["refine", b, a, "--config", r1, "--out", out2, "--json", r2], capsys)[0] == 0
    assert json.loads(r2.read_text())["config"] == rep["config"]
    assert np.array_equal(read_ply(out)[0].vertices, read_ply(out2)[0].vertices)


def test_gen(tmp_path, capsys):
    spec = tmp_path / "s.toml"
    spec.write_text('generator = "capsuleDrape"\ngap = -0.5\n')
    out = tmp_path / "cloth.ply"
    assert run(["gen", "--spec", spec, "--out", out], capsys)[0] == 0
    assert (tmp_path / "cloth_body.ply").exists()
    spec.write_text('generator = "planeGrid"\nnx = 3\nny = 3\n')
    code, out_json, _ = run(["gen", "--spec", spec, "--out", tmp_path / "g.obj", "--json", "-"], capsys)
    assert json.loads(out_json)["result"]["n_faces"] == 8


def test_console_script_module():
    res = subprocess.run([sys.executable, "-m", "drapegeom.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "drapegeom" in res.stdout
