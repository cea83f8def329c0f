import csv
import json
import subprocess
import sys

import pytest

import gridsense as gs
from gridsense.cli import main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _manifest(out):
    return json.loads((out / "run_manifest.json").read_text())


def _heavy_two_bus(tmp_path):
    d = json.loads(gs.bundled_path("two_bus").read_text())
    d["buses"][1]["injections"]["a"] = {"p_kw": 9000.0, "q_kvar": 9000.0}
    p = tmp_path / "heavy.json"
    p.write_text(json.dumps(d))
    return p


def test_solve(tmp_path):
    assert main(["solve", "ieee13_like", "-o", str(tmp_path)]) == 0
    v = _rows(tmp_path / "voltages.csv")
    assert v[0] == ["bus", "phase", "re", "im", "mag", "angle_deg"]
    assert len(v) - 1 == gs.build_compound_admittance(gs.load_network("ieee13_like")).index.m
    c = _rows(tmp_path / "currents.csv")
    assert c[0] == ["from_bus", "to_bus", "phase", "re", "im", "mag"]
    m = _manifest(tmp_path)
    assert m["command"] == "solve" and m["status"] == "ok"
    assert m["input_sha256"] == gs.io.file_sha256(gs.bundled_path("ieee13_like"))
    assert m["version"] == gs.__version__ and m["backend"] in ("numba", "numpy")
    assert "timestamp" not in json.dumps(m)


def test_sens_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["sens", "ieee13_like", "-o", str(out)]) == 0
    for name in ("sens_voltage.csv", "sens_current.csv", "sens_tap.csv", "run_manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_sens_wrt_and_filter(tmp_path):
    assert main(["sens", "ieee13_like", "-o", str(tmp_path), "--wrt", "p",
                 "--bus", "7", "--phase", "a"]) == 0
    v = _rows(tmp_path / "sens_voltage.csv")
    assert v[0] == ["i_bus", "i_phase", "l_bus", "l_phase", "dmag_dP", "dmag_dQ"]
    body = v[1:]
    assert body and all(r[2] == "7" and r[3] == "a" for r in body)
    assert all(r[4] != "" and r[5] == "" for r in body)
    assert not (tmp_path / "sens_tap.csv").exists()
    cur = _rows(tmp_path / "sens_current.csv")
    assert cur[0][-1] == "valid" and {r[-1] for r in cur[1:]} <= {"true", "false"}


def test_sens_filter_no_match(tmp_path):
    assert main(["sens", "ieee13_like", "-o", str(tmp_path), "--wrt", "q", "--bus", "999"]) == 0
    assert len(_rows(tmp_path / "sens_voltage.csv")) == 1


def test_sens_tap(tmp_path):
    assert main(["sens", "ieee13_like", "-o", str(tmp_path), "--wrt", "tap"]) == 0
    t = _rows(tmp_path / "sens_tap.csv")
    assert t[0] == ["i_bus", "i_phase", "k_bus", "k_phase", "dmag_dslack", "dmag_dtap", "valid"]
    assert len(t) > 1


def test_validate(tmp_path):
    assert main(["validate", "two_bus", "-o", str(tmp_path)]) == 0
    e = _rows(tmp_path / "errors.csv")
    assert e[0] == ["kind", "row", "col", "analytical", "oracle", "jacobian",
                    "rel_err_oracle", "rel_err_jacobian", "ok"]
    assert {r[0] for r in e[1:]} >= {"v_p", "v_q"}
    assert all(r[-1] == "true" for r in e[1:])


def test_validate_failure_exit(tmp_path):
    assert main(["validate", "two_bus", "-o", str(tmp_path), "--rtol", "1e-14",
                 "--atol", "1e-16", "--small", "0"]) == 2
    assert _manifest(tmp_path)["status"].startswith("validation failed")


def test_bench(tmp_path):
    assert main(["bench", "two_bus", "-o", str(tmp_path), "--repetitions", "30"]) == 0
    b = _rows(tmp_path / "bench.csv")
    assert b[0] == ["method", "mean_ms", "ci_ms", "ratio"]
    assert [r[0] for r in b[1:]] == ["jacobian", "analytical"]
    assert main(["bench", "two_bus", "-o", str(tmp_path), "--repetitions", "5"]) == 2


def test_control(tmp_path):
    assert main(["control", "ieee34_like", "-o", str(tmp_path), "--mode", "per-phase"]) == 0
    sol = _rows(tmp_path / "control_solution.csv")
    assert sol[0] == ["kind", "bus", "phase", "initial", "continuous", "final", "lower", "upper"]
    assert sum(r[0] == "tap" for r in sol[1:]) == 3
    prof = _rows(tmp_path / "profile_before_after.csv")
    assert prof[0] == ["bus", "phase", "before", "predicted", "after"]
    s = _manifest(tmp_path)["summary"]
    assert s is not None


def test_dump_admittance(tmp_path):
    assert main(["dump-admittance", "two_bus", "-o", str(tmp_path)]) == 0
    a = _rows(tmp_path / "admittance.csv")
    assert a[0] == ["row", "col", "re", "im"] and len(a) == 5
    idx = _rows(tmp_path / "index.csv")
    assert idx[1:] == [["0", "1", "a", "slack"], ["1", "2", "a", "pq"]]


def test_exit_schema(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"base_power_va": 1}')
    assert main(["solve", str(bad), "-o", str(tmp_path / "o")]) == 2
    assert _manifest(tmp_path / "o")["status"].startswith("invalid input")


def test_exit_numerical(tmp_path):
    assert main(["solve", str(_heavy_two_bus(tmp_path)), "-o", str(tmp_path / "o")]) == 3


def test_exit_io(tmp_path):
    assert main(["solve", str(tmp_path / "missing.json"), "-o", str(tmp_path / "o")]) == 4
    m = _manifest(tmp_path / "o")
    assert m["input_sha256"] is None and m["status"].startswith("I/O failure")


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gridsense.cli", "--version"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and gs.__version__ in r.stdout
