import csv
import json
import math
import struct
from pathlib import Path

import numpy as np
import pytest

from slowvary.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERIC, EXIT_OK, SCHEMA_VERSION, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_psi_zero_row(tmp_path):
    out = tmp_path / "o"
    assert main(["psi", str(CONFIGS / "cauchy_psi.ini"), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "psi.csv")
    assert rows[0] == ["rho", "psi", "h_ratio"]
    assert rows[1][:2] == ["0.0", "0.0"]
    rho, psi = float(rows[2][0]), float(rows[2][1])
    assert psi == pytest.approx(math.pi * rho, rel=1e-8)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == SCHEMA_VERSION and summary["status"] == "PASS"


def test_certificate_fail_exit_code(tmp_path):
    cfg = write(tmp_path, "[kernel]\nfamily = log\nalpha = 1\n[psi]\npoints = 5\n")
    out = tmp_path / "o"
    assert main(["psi", str(cfg), "--out", str(out)]) == EXIT_FAIL
    assert json.loads((out / "summary.json").read_text())["status"] == "FAIL"


def test_solve_closed_form(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", str(CONFIGS / "cauchy_solve.ini"), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["result"]["closed_form_error"] < 1e-8
    blob = (out / "solution.bin").read_bytes()
    assert blob[:4] == b"SVST"
    d, N, M1, P = struct.unpack("<iiid", blob[4:24])
    assert (d, N, M1, P) == (1, 64, 2001, 1.0)
    body = np.frombuffer(blob[24:], dtype="<f8")
    assert body.size == M1 + M1 * N
    x = (-math.pi + 2 * math.pi * np.arange(N) / N)
    exact = np.cos(x) * (math.exp(-1) - math.exp(-math.pi)) / (math.pi - 1)
    assert np.max(np.abs(body[-N:] - exact)) < 1e-8


def test_malformed_config_writes_nothing(tmp_path):
    out = tmp_path / "o"
    bad = write(tmp_path, "[kernel\nfamily = stable\n")
    assert main(["psi", str(bad), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()
    bad2 = write(tmp_path, "[kernel]\nfamily = stable\n[solve]\nN = 48\n", "b2.ini")
    assert main(["solve", str(bad2), "--out", str(out)]) == EXIT_CONFIG
    bad3 = write(tmp_path, "[kernel]\nfamily = stable\n[solve]\np = 1\n", "b3.ini")
    assert main(["solve", str(bad3), "--out", str(out)]) == EXIT_CONFIG
    assert main(["psi", str(tmp_path / "missing.ini"), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_numerical_failure_status(tmp_path):
    cfg = write(tmp_path, "[kernel]\nfamily = truncated\n[heatkernel]\ntimes = 0.1\n"
                          "x_min = 0\nx_max = 1\npoints = 3\n")
    out = tmp_path / "o"
    assert main(["heatkernel", str(cfg), "--out", str(out)]) == EXIT_NUMERIC
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "error" and "TimeTooSmallError" in summary["error"]
    assert sorted(p.name for p in out.iterdir()) == ["summary.json"]


def test_byte_identical_reruns(tmp_path):
    cfg = CONFIGS / "log_heatkernel.ini"
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["heatkernel", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["heatkernel", str(cfg), "--out", str(b)]) == EXIT_OK
    for name in ("heatkernel.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    header = read_csv(a / "heatkernel.csv")[0]
    assert header[:3] == ["t", "r", "p"] and all(h.startswith("env_") for h in header[3:])


def test_output_dir_env_override(tmp_path, monkeypatch):
    target = tmp_path / "env_out"
    monkeypatch.setenv("SLOWVARY_OUTPUT_DIR", str(target))
    assert main(["psi", str(CONFIGS / "cauchy_psi.ini")]) == EXIT_OK
    assert (target / "psi.csv").exists()


def test_bounds_and_report(tmp_path):
    out = tmp_path / "o"
    assert main(["bounds", str(CONFIGS / "truncated_bounds.ini"), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "bounds.csv")
    assert rows[0] == ["bound", "k", "m", "sup_coarse", "sup_fine", "change", "finite"]
    rep = tmp_path / "rep"
    assert main(["report", str(out / "summary.json"), "--out", str(rep)]) == EXIT_OK
    table = read_csv(rep / "bounds.csv")
    assert len(table) == len(rows)
    assert (rep / "scalars.csv").exists()


def test_unknown_bound_is_config_error(tmp_path):
    cfg = write(tmp_path, "[kernel]\nfamily = stable\n[bounds]\nnames = nope\n")
    out = tmp_path / "o"
    assert main(["bounds", str(cfg), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()
