import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from belqr.cli import DataError, load_dataset, main, run
from belqr.simulation import generate


def write(path, text):
    path.write_text(text)
    return path


def test_load_toy_csv(tmp_path):
    d = load_dataset(write(tmp_path / "a.csv", "y,x\n1,0\n2,1\n4,2\n"), "y", ["x"])
    assert (d.n, d.p) == (3, 1)
    np.testing.assert_array_equal(d.X[:, 0], 1.0)
    np.testing.assert_array_equal(d.y, [1, 2, 4])


def test_load_blank_cell(tmp_path):
    with pytest.raises(DataError, match=r"row 3, column 'x'"):
        load_dataset(write(tmp_path / "a.csv", "y,x\n1,0\n2,\n4,2\n"), "y", ["x"])


def test_load_non_numeric(tmp_path):
    with pytest.raises(DataError, match=r"row 2, column 'y'.*'abc'"):
        load_dataset(write(tmp_path / "a.csv", "y,x\nabc,0\n"), "y", ["x"])


def test_load_column_order(tmp_path):
    p = write(tmp_path / "a.csv", "x1,y,x2\n1,0,10\n2,1,20\n3,5,40\n4,2,70\n")
    d = load_dataset(p, "y", ["x2", "x1"])
    np.testing.assert_array_equal(d.X[:, 1], [10, 20, 40, 70])
    np.testing.assert_array_equal(d.X[:, 2], [1, 2, 3, 4])
    assert d.coef_names[1:] == ("x2", "x1")


def test_load_missing_column_and_empty(tmp_path):
    with pytest.raises(DataError, match="missing column 'w'"):
        load_dataset(write(tmp_path / "a.csv", "y,x\n1,2\n"), "y", ["w"])
    with pytest.raises(DataError, match="empty"):
        load_dataset(write(tmp_path / "b.csv", ""), "y", ["x"])
    with pytest.raises(DataError, match="not found"):
        load_dataset(tmp_path / "none.csv", "y", ["x"])


def m1_csv(tmp_path, n=200):
    d = generate("M1", n, 0)
    p = tmp_path / "m1.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "x", "z"])
        w.writerows(np.column_stack([d.y, d.X[:, 1:]]).tolist())
    return p


def test_fit_smoke(tmp_path):
    out = tmp_path / "fit"
    status = main(["fit", "--data", str(m1_csv(tmp_path)), "--covariates", "x,z", "--taus", "0.5",
                   "--method", "BEL.s", "--iters", "2000", "--burn-in", "500", "--out", str(out)])
    assert status == 0
    with open(out / "estimates.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["coefficient"] for r in rows] == ["intercept", "x", "z"]
    for r in rows:
        assert float(r["lower"]) <= float(r["mean"]) <= float(r["upper"])
    assert json.loads((out / "metadata.json").read_text())["exit_status"] == 0


def test_asymptotics_table(tmp_path):
    out = tmp_path / "asy"
    assert main(["asymptotics", "--model", "M1", "--taus", "0.25,0.5,0.75", "--compare", "BEL.c", "RQ",
                 "--out", str(out)]) == 0
    lines = (out / "table.txt").read_text().splitlines()
    assert lines[0].split("\t") == ["model", "comparison", "coefficient", "tau=0.25", "tau=0.5", "tau=0.75"]
    assert lines[1].split("\t")[3:] == ["1.598", "1.352", "1.598"]
    with open(out / "table.csv") as fh:
        rows = list(csv.reader(fh))
    assert float(rows[1][3]) == pytest.approx(1.598, abs=5e-4)


def test_simulate_coverage_layout(tmp_path):
    out = tmp_path / "cov"
    assert main(["simulate", "coverage", "--n", "100", "--reps", "2", "--methods", "BEL.s,BDL",
                 "--iters", "1500", "--burn-in", "500", "--out", str(out)]) == 0
    with open(out / "table.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "coefficient", "coverage_BEL.s", "coverage_BDL", "length_BEL.s", "length_BDL"]
    assert [r[1] for r in rows[1:]] == ["intercept", "x_centered"]


def test_error_record(tmp_path):
    out = tmp_path / "err"
    status = run({"command": "fit", "output_dir": str(out), "taus": [0.5],
                  "data": {"path": str(tmp_path / "missing.csv"), "covariates": ["x"]}})
    assert status == 1
    rec = json.loads((out / "error.json").read_text())
    assert rec["module"] == "belqr.cli"
    assert rec["error"] == "DataError"
    assert "not found" in rec["message"]
    rec = run({"command": "bogus", "output_dir": str(out)})
    assert rec == 1


def test_error_names_failing_module(tmp_path):
    out = tmp_path / "err"
    assert run({"command": "asymptotics", "output_dir": str(out), "models": ["M3"], "taus": [0.25, 0.75],
                "compare": ["CQR", "RQ"]}) == 1
    assert json.loads((out / "error.json").read_text())["module"] == "belqr.asymptotics"


def test_config_echo_reproduces(tmp_path):
    data = m1_csv(tmp_path, 120)
    first = tmp_path / "first"
    assert main(["validate", "--data", str(data), "--covariates", "x,z", "--taus", "0.5,0.9",
                 "--methods", "RQ,BEL.s", "--splits", "2", "--subset", "low:x:<:median",
                 "--iters", "1200", "--burn-in", "300", "--seed", "5", "--out", str(first)]) == 0
    second = tmp_path / "second"
    assert main(["run", str(first / "config.json"), "--out", str(second)]) == 0
    for name in ("report.csv", "report.txt"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    a = json.loads((first / "report.json").read_text())
    b = json.loads((second / "report.json").read_text())
    assert a["rows"] == b["rows"]


def test_entry_point(tmp_path):
    out = tmp_path / "ep"
    r = subprocess.run([sys.executable, "-m", "belqr.cli", "asymptotics", "--taus", "0.5", "--out", str(out)],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert "M1\tBEL.c/RQ\tx\t1.000" in r.stdout
