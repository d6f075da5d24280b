import csv
import io

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fastinudft import cli
from fastinudft.problem import PointDistribution, dense_matrix, generate_points

from conftest import crandn


def test_format_value():
    assert cli.format_value(0.000123456) == "1.235e-04"
    assert cli.format_value(None) == ""
    assert cli.format_value(True) == "true"
    assert cli.format_value(np.int64(7)) == "7"
    assert cli.format_value(float("nan")) == "nan"
    assert cli.format_value("rp") == "rp"


def test_read_config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# sweep\nn-list = 2^7, 256\nalpha=0.4  # one value\nleaf_size = 32\n")
    assert cli.read_config(p) == {"n-list": "2^7, 256", "alpha": "0.4", "leaf-size": "32"}
    p.write_text("bogus = 1\n")
    with pytest.raises(ValueError, match="unknown key"):
        cli.read_config(p)
    p.write_text("n-list 5\n")
    with pytest.raises(ValueError):
        cli.read_config(p)


def test_config_file_and_flag_precedence(tmp_path, capsys):
    p = tmp_path / "run.cfg"
    p.write_text("n-list = 64\nalpha = 1e-7\nrho = 1e-12, 1e-4\nprobes = 4\nleaf-size = 16\n")
    rc = cli.main(["error-decomp", "--config", str(p), "--rho", "1e-10", "--output", "-"])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["rho"] for r in rows] == ["1.000e-10"]
    assert rows[0]["N"] == "64" and rows[0]["case"] == "rp"


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(tmp_path / "out"))
    rc = cli.main(["rank-probe", "--n-list", "2^6", "--leaf-size", "16"])
    assert rc == 0
    text = (tmp_path / "out" / "rank-probe.csv").read_text()
    header, row = text.strip().splitlines()
    assert header == "case,N,alpha,eps,rank"
    assert row.startswith("rp,64,4.000e-01,1.000e-07,")


def test_errors_exit_with_status_2(capsys):
    assert cli.main(["direct-solve", "--n-list", "2^17", "--output", "-"]) == 2
    assert "desk cap" in capsys.readouterr().err
    assert cli.main(["direct-solve", "--alpha", "0.7", "--output", "-"]) == 2
    with pytest.raises(SystemExit):
        cli.main(["no-such-command"])


@pytest.mark.parametrize("fmt,ext", [("auto", ".csv"), ("auto", ".bin"), ("csv", ".dat")])
def test_solve_round_trip(tmp_path, fmt, ext):
    prob = generate_points(PointDistribution("pp", 0.1, 0.4, 0), 512, 128)
    u0 = crandn(np.random.default_rng(4), 128)
    f = dense_matrix(prob.sample_points, prob.frequencies) @ u0
    paths = {k: tmp_path / f"{k}{ext}" for k in ("x", "w", "f", "u")}
    use_csv = ext == ".csv" or fmt == "csv"
    for key, v in (("x", prob.sample_points), ("w", prob.frequencies)):
        if use_csv:
            np.savetxt(paths[key], v, delimiter=",")
        else:
            v.astype("<f8").tofile(paths[key])
    cli.write_vector(paths["f"], f, fmt=fmt)
    rc = cli.main(["solve", "--points", str(paths["x"]), "--frequencies", str(paths["w"]),
                   "--values", str(paths["f"]), "--out", str(paths["u"]), "--format", fmt,
                   "--leaf-size", "32"])
    assert rc == 0
    u = cli.read_vector(paths["u"], complex_values=True, fmt=fmt)
    assert_allclose(u, u0, atol=1e-7 * np.abs(u0).max())


def test_vector_io_errors(tmp_path):
    p = tmp_path / "v.csv"
    np.savetxt(p, np.ones((3, 3)), delimiter=",")
    with pytest.raises(ValueError):
        cli.read_vector(p, complex_values=True)
    q = tmp_path / "v.bin"
    np.ones(3).tofile(q)
    with pytest.raises(ValueError):
        cli.read_vector(q, complex_values=True)


def test_solve_length_mismatch(tmp_path, capsys):
    x = tmp_path / "x.csv"
    np.savetxt(x, [0.1, 0.5, 0.7])
    cli.write_vector(tmp_path / "f.csv", np.ones(2))
    rc = cli.main(["solve", "--points", str(x), "--frequencies", str(x), "--values",
                   str(tmp_path / "f.csv"), "--out", str(tmp_path / "u.csv")])
    assert rc == 2
    assert "values for" in capsys.readouterr().err
