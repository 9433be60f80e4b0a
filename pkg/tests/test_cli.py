import csv
import json

import numpy as np
import pytest

from neumann_perturb.cli import ConfigError, main, validate_config
from neumann_perturb.mesh import load_mesh


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = main(["--out", str(out), "--deterministic", *argv])
    return code, out


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_mesh_gen(tmp_path):
    code, out = run(tmp_path, "mesh", "gen", "--shape", "disk", "--n", "3", "--out", "d.txt")
    assert code == 0
    m = load_mesh(out / "d.txt")
    report = json.loads((out / "report.json").read_text())
    assert report["vertices"] == m.n_vertices and report["euler_characteristic"] == 1


def test_eigs_minimal(tmp_path):
    code, out = run(tmp_path, "eigs", "--mesh", "square:8", "--k", "6")
    assert code == 0
    r = rows(out / "spectrum.csv")
    assert abs(float(r[0]["eigenvalue"])) < 1e-9
    assert [x["multiplicity"] for x in r[:3]] == ["1", "2", "2"]


def test_hadamard_zero(tmp_path):
    code, out = run(tmp_path, "hadamard", "--mesh", "square:8", "--perturb", "zero", "--cluster-index", "1")
    assert code == 0
    assert all(float(x["value"]) == 0.0 for x in rows(out / "matrix.csv"))


def test_hadamard_from_config(tmp_path):
    cfg = {"mesh": {"shape": "square", "n": 8}, "perturbation": {"type": "constant", "c11": 1, "c12": 0, "c22": 2}}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    code, out = run(tmp_path, "--config", str(p), "hadamard", "--method", "discrete")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["provenance"] == "discrete-oracle"
    np.testing.assert_allclose(report["eigenvalues_discrete"], [-2 * np.pi**2, -np.pi**2], rtol=0.05)


def test_branches_pipeline(tmp_path):
    code, out = run(
        tmp_path, "--threads", "2", "branches", "--mesh", "square:12", "--perturb", "diag:1,2",
        "--tmin", "-0.02", "--tmax", "0.02", "--steps", "5",
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert max(report["max_relative_deviation"].values()) < 0.02
    assert len(rows(out / "branches.csv")) == 10


def test_ls_pipeline(tmp_path):
    code, out = run(tmp_path, "ls", "--mesh", "square:8", "--perturb", "diag:1,2", "--t", "0.01,0.02")
    assert code == 0
    r = rows(out / "roots.csv")
    assert len(r) == 4
    assert all(float(x["abs_diff"]) <= 1e-7 * float(x["pencil_eigenvalue"]) for x in r)


def test_generic_pipeline(tmp_path):
    code, out = run(tmp_path, "generic", "--mesh", "square:8", "--samples", "4", "--seed", "3")
    assert code == 0
    assert json.loads((out / "report.json").read_text())["split_fraction"] == 1.0
    code, out = run(tmp_path, "generic", "--mesh", "square:8", "--samples", "3", "--family", "scaling", name="s")
    assert json.loads((out / "report.json").read_text())["split_fraction"] == 0.0


def test_verify_calculus(tmp_path):
    code, out = run(tmp_path, "verify-calculus", "--suite", "lemma2", "--steps", "1e-3,5e-4,2.5e-4", "--out", "r.csv")
    assert code == 0
    r = rows(out / "r.csv")
    assert list(r[0]) == ["identity", "point", "step", "residual", "fitted_order"]
    assert all(float(x["fitted_order"]) >= 1.9 for x in r)


def test_deterministic_outputs(tmp_path):
    argv = ["branches", "--mesh", "square:8", "--perturb", "random:4", "--tmin", "-0.01", "--tmax", "0.01", "--steps", "3"]
    _, a = run(tmp_path, *argv, name="a")
    _, b = run(tmp_path, *argv, name="b")
    for f in ("branches.csv", "report.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert "created" not in json.loads((a / "report.json").read_text())


def test_timestamp_without_deterministic(tmp_path):
    assert main(["--out", str(tmp_path), "eigs", "--mesh", "square:4", "--k", "3"]) == 0
    assert "created" in json.loads((tmp_path / "report.json").read_text())


@pytest.mark.parametrize(
    "cfg,pointer",
    [
        ({"mesh": {"shape": "square", "n": 0}}, "/mesh/n"),
        ({"mesh": {"shape": "torus", "n": 3}}, "/mesh/shape"),
        ({"perturbation": {"type": "constant", "c11": 1, "c22": 1}}, "/perturbation/c12"),
        ({"tolerances": {"cluster_tol": -1}}, "/tolerances/cluster_tol"),
        ({"t_grid": [0.1, "x"]}, "/t_grid/1"),
        ({"cluster": {"window": [3, 1]}}, "/cluster/window"),
        ({"bogus": 1}, "/bogus"),
        ({"generic": {"samples": 0}}, "/generic/samples"),
        ({"calculus": {"suite": "lemma9"}}, "/calculus/suite"),
        ([1, 2], ""),
    ],
)
def test_config_errors_carry_pointer(cfg, pointer):
    with pytest.raises(ConfigError) as exc:
        validate_config(cfg)
    assert exc.value.pointer == pointer


def test_invalid_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"mesh": {"shape": "square", "n": -2}}))
    assert main(["--config", str(p), "--out", str(tmp_path), "eigs"]) == 2
    assert "/mesh/n" in capsys.readouterr().err
    p.write_text("{not json")
    assert main(["--config", str(p), "--out", str(tmp_path), "eigs"]) == 2


def test_t_grid_leaving_spd_cone_is_invalid(tmp_path, capsys):
    code, _ = run(tmp_path, "branches", "--mesh", "square:4", "--perturb", "diag:-30,0", "--tmin", "-0.1", "--tmax", "0.1", "--steps", "3")
    assert code == 2
    assert "/t_grid" in capsys.readouterr().err


def test_numerical_failure_names_module(tmp_path, capsys):
    code, _ = run(tmp_path, "ls", "--mesh", "square:8", "--perturb", "diag:1,2", "--t", "0.1", "--window", "1e-9")
    assert code == 3
    assert "liapunov_schmidt" in capsys.readouterr().err


def test_bad_cluster_index(tmp_path):
    code, _ = run(tmp_path, "eigs", "--mesh", "square:2", "--cluster-index", "50")
    assert code == 0  # eigs ignores the cluster selector
    code, _ = run(tmp_path, "hadamard", "--mesh", "square:2", "--cluster-index", "50", "--perturb", "zero")
    assert code == 2


def test_missing_mesh_file(tmp_path):
    code, _ = run(tmp_path, "eigs", "--mesh", str(tmp_path / "none.txt"))
    assert code == 2
