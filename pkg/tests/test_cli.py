import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hdgstokes.cli import main
from hdgstokes.mesh import Mesh


def _rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config: ")
    return json.loads(lines[0][len("# config: "):]), list(csv.DictReader(lines[1:]))


def test_run_writes_one_row_per_mesh(tmp_path):
    out = tmp_path / "run.csv"
    assert main(["run", "--case", "manufactured", "--family", "pm-rt", "--k", "2", "--mesh", "trapezoid:2,4,8,16", "-o", str(out)]) == 0
    config, rows = _rows(out)
    assert len(rows) == 4
    assert config["alpha"] == {"2": 64.0} or 64.0 in json.dumps(config)
    assert all(float(r["e_div"]) <= 1e-10 for r in rows)
    e_u = [float(r["e_u"]) for r in rows]
    assert e_u == sorted(e_u, reverse=True)
    timing = (tmp_path / "run.csv.timing.csv").read_text().splitlines()
    assert len(timing) == 1 + 1 + 4


def test_hydrostatic_run(tmp_path):
    out = tmp_path / "h.csv"
    assert main(["run", "--case", "hydrostatic", "--family", "pm-rt", "--k", "2", "--param", "c=1e4", "--mesh", "trapezoid:16", "-o", str(out)]) == 0
    _, rows = _rows(out)
    assert float(rows[0]["e_u"]) <= 1e-8


def test_unknown_family_is_usage_error(capsys):
    assert main(["run", "--family", "taylor-hood", "--mesh", "trapezoid:2"]) == 2
    err = capsys.readouterr().err
    assert "pm-rt" in err and "rw" in err


def test_bad_flags_are_usage_errors(capsys):
    assert main(["run", "--k", "0", "--mesh", "trapezoid:2"]) == 2
    assert main(["run", "--alpha", "-1", "--mesh", "trapezoid:2"]) == 2
    assert main(["run", "--mesh", "hexagon:3"]) == 2
    assert main(["frobnicate"]) == 2


def test_csv_is_deterministic(tmp_path):
    args = ["run", "--k", "1", "--mesh", "trapezoid:2,4"]
    out = tmp_path / "a.csv"
    assert main(args + ["-o", str(out)]) == 0
    first = out.read_bytes()
    assert main(args + ["-o", str(out)]) == 0
    assert out.read_bytes() == first


def test_parallel_matches_serial(tmp_path, monkeypatch):
    args = ["run", "--k", "1,2", "--mesh", "trapezoid:2,4"]
    out = tmp_path / "sweep.csv"
    monkeypatch.setenv("HDG_STOKES_THREADS", "1")
    assert main(args + ["-o", str(out)]) == 0
    serial = out.read_bytes()
    monkeypatch.setenv("HDG_STOKES_THREADS", "2")
    assert main(args + ["-o", str(out)]) == 0
    assert out.read_bytes() == serial
    monkeypatch.setenv("HDG_STOKES_THREADS", "lots")
    assert main(args) == 2


def test_toml_config_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('case = "manufactured"\nfamily = "pm-bdm"\nk = 2\nmesh = "trapezoid:2,4"\nalpha = 100.0\n')
    out = tmp_path / "o.csv"
    assert main(["run", "--config", str(cfg), "--family", "pm-rt", "-o", str(out)]) == 0
    config, rows = _rows(out)
    assert config["family"] == "pm-rt"
    assert config["alpha"] == 100.0 or "100.0" in json.dumps(config["alpha"])
    assert len(rows) == 2 and rows[0]["family"] == "pm-rt"


def test_convergence_rates_and_gnuplot(tmp_path):
    out = tmp_path / "conv.csv"
    assert main(["convergence", "--k", "1", "--mesh", "trapezoid:4,8,16", "-o", str(out)]) == 0
    _, rows = _rows(out)
    assert rows[0]["rate_e_u"] == "nan"
    assert float(rows[-1]["rate_e_u"]) > 1.8
    dat = (tmp_path / "conv_e_u.dat").read_text().splitlines()
    data = np.loadtxt([l for l in dat if l and not l.startswith("#")])
    assert data.shape == (3, 2)
    for m in ("e_p", "e_div", "e_jump"):
        assert (tmp_path / f"conv_{m}.dat").exists()


def test_rw_convergence_has_nonzero_divergence(tmp_path):
    out = tmp_path / "rw.csv"
    assert main(["convergence", "--family", "rw", "--k", "1", "--mesh", "trapezoid:4,8", "-o", str(out)]) == 0
    _, rows = _rows(out)
    assert all(float(r["e_div"]) > 1e-3 for r in rows)


def test_viscosity_sweep(tmp_path):
    out = tmp_path / "nu.csv"
    assert main(["convergence", "--k", "2", "--nu", "1,1e-3,1e-6", "--mesh", "trapezoid:4,8", "-o", str(out)]) == 0
    _, rows = _rows(out)
    e = np.array([float(r["e_u"]) for r in rows]).reshape(3, 2)
    np.testing.assert_allclose(e, np.broadcast_to(e[0], e.shape), rtol=1e-6)


def test_check_element(tmp_path, capsys):
    out = tmp_path / "el.json"
    assert main(["check-element", "--family", "pm-rt", "--k", "3", "-o", str(out)]) == 0
    assert json.loads(out.read_text())["verdict"] == "divergence-free"
    assert main(["check-element", "--family", "pm-bdm", "--k", "2"]) == 0
    assert "-> divergence-free" in capsys.readouterr().out
    assert main(["check-element", "--family", "rw", "--k", "1", "-o", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["verdict"] == "not divergence-free"
    assert report["counterexample"]["pairing"] <= 1e-12 < 1e-2 < report["counterexample"]["div_norm"]
    assert "counterexample" in capsys.readouterr().out


def test_inf_sup(tmp_path, capsys):
    out = tmp_path / "beta.csv"
    assert main(["inf-sup", "--family", "pm-rt", "--k", "1", "--mesh", "trapezoid:2,4,8", "-o", str(out)]) == 0
    _, rows = _rows(out)
    beta = [float(r["beta"]) for r in rows]
    assert len(beta) == 3 and min(beta) > 0
    assert max(beta) / min(beta) - 1 <= 0.25
    assert main(["inf-sup", "--k", "2", "--mesh", "trapezoid:32"]) == 2
    assert "3000" in capsys.readouterr().err


def test_mesh_command_roundtrip(tmp_path):
    out = tmp_path / "m.json"
    assert main(["mesh", "--mesh", "bearing:16", "--mesh-opt", "geo_degree=2", "-o", str(out)]) == 0
    mesh = Mesh.load(out)
    assert mesh.num_cells == 16 * 2
    res = tmp_path / "r.csv"
    assert main(["run", "--case", "bearing", "--k", "1", "--mesh", str(out), "-o", str(res)]) == 0
    _, rows = _rows(res)
    assert float(rows[0]["e_div"]) <= 1e-10 and rows[0]["e_u"] == "nan"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hdgstokes", "check-element", "--family", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "pm-rt" in proc.stderr
