import argparse
import json
import subprocess
import sys

import numpy as np
import pytest

from oseenflow import cli
from oseenflow.fields import make_datum


def _solve(tmp_path, *extra):
    return cli.main(["solve", "--dim", "2", "--datum", "rotational",
                     "--epsilon", "0.05", "--n-radial", "24",
                     "--tol", "1e-6", "--out", str(tmp_path), *extra])


def test_usage_error_exit_code():
    assert cli.main(["frobnicate"]) == 64
    assert cli.main([]) == 64


def test_unknown_flag_exit_code():
    assert cli.main(["verify", "sphere", "--frobnicate"]) == 64


def test_fmt_roundtrips_doubles():
    for v in [np.pi, 1e-17, -3.5, 0.1]:
        assert float(cli._fmt(v)) == v


def test_config_file_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# solver settings\n"
                 "epsilon = 0.07\n"
                 "n_radial = 48\n\n"
                 "datum = anisotropic\n")
    cfg = cli._read_config(p)
    assert cfg == {"epsilon": "0.07", "n_radial": "48",
                   "datum": "anisotropic"}


def test_config_file_rejects_garbage(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("this is not a key value line\n")
    with pytest.raises(ValueError):
        cli._read_config(p)


def test_flag_overrides_config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("epsilon = 0.07\nn_radial = 48\n")
    args = argparse.Namespace(config=str(p), epsilon=0.02)
    s = cli._settings(args)
    assert s["epsilon"] == 0.02
    assert s["n_radial"] == 48
    assert s["dim"] == cli._DEFAULTS["dim"]


def test_unknown_config_key_rejected(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("frobnicate = 3\n")
    with pytest.raises(ValueError):
        cli._settings(argparse.Namespace(config=str(p)))


def test_verify_sphere_passes(capsys):
    rc = cli.main(["verify", "sphere", "--dim", "3", "--order", "24"])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.count("PASS") == 5
    assert "FAIL" not in out


def test_verify_kernels_passes(capsys):
    rc = cli.main(["verify", "kernels", "--dim", "3"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "FAIL" not in out


def test_solve_writes_artifacts(tmp_path):
    assert _solve(tmp_path) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["final_residual"] <= 1e-6
    assert summary["datum_kind"] == "rotational2d"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert "determinism_hash" in manifest
    assert (tmp_path / "U.csv").exists()
    assert (tmp_path / "trace.csv").exists()


def test_solve_csv_roundtrip(tmp_path):
    assert _solve(tmp_path) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    g = cli._grid_from_csv(tmp_path / "U.csv", summary)
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(10, 2))
    pts *= rng.uniform(1.0, 30.0, size=(10, 1)) / np.linalg.norm(
        pts, axis=1, keepdims=True)
    a = make_datum("rotational2d", 0.05)
    # the reloaded profile matches the datum to the solution's own size
    assert np.max(np.abs(g.eval(pts) - a.value(pts))) < 1e-2 * 0.05


def test_solve_deterministic(tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    assert _solve(d1) == 0
    assert _solve(d2) == 0
    assert (d1 / "U.csv").read_bytes() == (d2 / "U.csv").read_bytes()


def test_compare_after_solve(tmp_path):
    assert _solve(tmp_path, "--n-radial", "48") == 0
    rc = cli.main(["compare", "--profile", str(tmp_path / "U.csv"),
                   "--prediction", "2d", "--window", "20:200"])
    assert rc == 0
    rep = json.loads((tmp_path / "decay_report.json").read_text())
    assert "exponent" in rep
    assert (tmp_path / "decay_report.svg").exists()
    assert (tmp_path / "compare_manifest.json").exists()


def test_report_aggregates_runs(tmp_path):
    assert _solve(tmp_path / "run1") == 0
    rc = cli.main(["report", "--dir", str(tmp_path)])
    assert rc == 0
    text = (tmp_path / "report.md").read_text()
    assert "rotational2d" in text
    assert "Solver runs" in text


def test_report_empty_dir_fails(tmp_path):
    assert cli.main(["report", "--dir", str(tmp_path)]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "oseenflow.cli", "verify",
                        "sphere", "--dim", "2", "--order", "16"],
                       capture_output=True, text=True)
    assert r.returncode == 0
