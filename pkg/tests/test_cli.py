import csv
import subprocess
import sys

import pytest

from fembem.adapt import RUNLOG_COLUMNS
from fembem.cli import UsageError, main, read_config


def test_run_and_rates(tmp_path, capsys):
    out = tmp_path / "run.csv"
    svg = tmp_path / "run.svg"
    code = main(["run", "--problem", "lshape-laplace", "--coupling", "jn", "--max-elements", "1500",
                 "--out", str(out), "--plot", str(svg)])
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert list(rows[0]) == list(RUNLOG_COLUMNS)
    assert len(rows) >= 8
    assert svg.read_text().lstrip().startswith(("<?xml", "<svg"))
    capsys.readouterr()
    assert main(["rates", str(out), "--quantity", "err_omega", "--window", "6"]) == 0
    alpha = float(capsys.readouterr().out.strip())
    assert 0.3 < alpha < 0.7


def test_uniform_strategy_and_stabilized(tmp_path):
    out = tmp_path / "u.csv"
    assert main(["run", "--problem", "zshape-nonlinear", "--coupling", "sym", "--strategy", "uniform",
                 "--max-elements", "300", "--stabilized", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [int(r["n_triangles"]) for r in rows] == [14, 30, 82, 234]


def test_usage_errors(tmp_path, capsys):
    assert main(["run", "--problem", "square", "--coupling", "jn", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["run", "--problem", "lshape-laplace", "--coupling", "jn", "--theta", "0",
                 "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["rates", str(tmp_path / "missing.csv")]) == 2
    assert main([]) == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("# defaults\ntheta = 0.5\nmax_elements = 200\nquadrature_order = 5\n")
    assert read_config(cfg) == {"theta": 0.5, "max_elements": 200, "quadrature_order": 5}
    out = tmp_path / "c.csv"
    assert main(["run", "--problem", "lshape-laplace", "--coupling", "bmc", "--config", str(cfg),
                 "--out", str(out)]) == 0
    assert int(list(csv.DictReader(open(out)))[-1]["n_triangles"]) <= 200
    cfg.write_text("quadrature_order = 7\n")
    assert main(["run", "--problem", "lshape-laplace", "--coupling", "bmc", "--config", str(cfg),
                 "--out", str(out)]) == 2
    cfg.write_text("colour = blue\n")
    with pytest.raises(UsageError):
        read_config(cfg)


def test_verify(capsys):
    assert main(["verify", "--suite", "adapt", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out and "FAIL" not in out


def test_compare(tmp_path):
    out = tmp_path / "cmp.csv"
    assert main(["compare", "--problem", "lshape-laplace", "--max-elements", "200", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert list(rows[0])[:2] == ["coupling", "strategy"]
    assert {(r["coupling"], r["strategy"]) for r in rows} == {
        (m, s) for m in ("bmc", "jn", "sym") for s in ("uniform", "adaptive")}


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fembem.cli", "verify", "--suite", "adapt"],
                         capture_output=True, text=True)
    assert res.returncode == 0
