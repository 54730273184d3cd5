import csv
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from ssf_lab import cli
from ssf_lab.birman_schwinger import ConvergenceFailure

BAD = sorted((Path(__file__).parent / "fixtures" / "bad_configs").glob("*.json"))
EXAMPLES = Path(cli.__file__).parent / "examples"

WELL = {"profile": "square_well", "dimension": 1, "depth": 2.0, "half_width": 1.0}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _command_for(path):
    try:
        exp = json.loads(path.read_text()).get("experiment")
    except (ValueError, AttributeError):
        exp = None
    return exp if exp in cli.COMMANDS and "mismatch" not in path.name else "compute"


def test_there_are_at_least_twenty_bad_fixtures():
    assert len(BAD) >= 20


@pytest.mark.parametrize("path", BAD, ids=[p.stem for p in BAD])
def test_malformed_configs_exit_2_with_diagnostic(path, capsys):
    code = cli.main([_command_for(path), "--config", str(path)])
    err = capsys.readouterr().err
    assert code == 2
    assert "field $" in err or "line " in err
    assert err.startswith("ssf-lab: invalid configuration")


def test_missing_config_file(capsys):
    assert cli.main(["compute", "--config", "/nonexistent/cfg.json"]) == 2
    assert cli.main(["compute"]) == 2
    assert cli.main(["frobnicate"]) == 2


def test_compute_csv_has_anchor_row(tmp_path):
    out = tmp_path / "curve.csv"
    assert cli.main(["compute", "--config", str(EXAMPLES / "well1d.json"), "--out", str(out)]) == 0
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert tuple(rows[0]) == cli.CSV_HEADER
    anchor = rows[1]
    assert float(anchor[1]) == 0.0 and float(anchor[0]) < -2.0
    body = rows[2:]
    assert len(body) == 121
    assert {r[2] for r in body} == {"det"}
    assert all(r[3] == "0" for r in body)
    lam = [float(r[0]) for r in body]
    assert lam == sorted(lam)
    # plateau value inside the bound-state window
    xi = {round(float(r[0]), 6): float(r[1]) for r in body}
    assert xi[-0.5] == pytest.approx(-1.0, abs=1e-6)


def test_compute_is_byte_identical(tmp_path):
    cfg = {"experiment": "compute", "potential": WELL, "pipeline": "det2",
           "lambda_grid": {"min": -1.5, "max": 3.0, "points": 10},
           "outputs": {"csv": str(tmp_path / "a.csv"), "report": str(tmp_path / "a.json")}}
    path = _write(tmp_path, cfg)
    assert cli.main(["compute", "--config", path]) == 0
    first = (tmp_path / "a.csv").read_bytes(), (tmp_path / "a.json").read_bytes()
    assert cli.main(["compute", "--config", path]) == 0
    assert ((tmp_path / "a.csv").read_bytes(), (tmp_path / "a.json").read_bytes()) == first
    doc = json.loads(first[1])
    assert doc["eq"] == cli.EQ_TAGS["det2"]
    assert list(doc) == sorted(doc)
    assert "versions" in doc and "c" in doc["diagnostics"]
    # epsilon column is the smallest epsilon of the default schedule
    rows = list(csv.reader(io.StringIO(first[0].decode())))
    assert float(rows[2][3]) == 2.5e-3


def test_counting_command(tmp_path):
    out = tmp_path / "count.csv"
    assert cli.main(["counting", "--config", str(EXAMPLES / "counting1d.json"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    vals = [float(r["xi"]) for r in rows]
    assert all(v == round(v) for v in vals)
    assert {r["method"] for r in rows} == {"counting"}


def test_converge_determinant_report(tmp_path):
    cfg = {"experiment": "converge", "potential": WELL, "study": "determinant", "z": [0.0, 1.0],
           "domain_sequence": [{"kind": "interval", "a": -h, "b": h} for h in (5.0, 10.0, 20.0)]}
    out = tmp_path / "r.json"
    assert cli.main(["converge", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    text = out.read_text()
    doc = json.loads(text)
    assert doc["eq"] == cli.EQ_TAGS["determinant"]
    assert doc["verdicts"]["monotone"] is True
    assert {r["eq"] for r in doc["rows"]} == {cli.EQ_TAGS["determinant"]}
    assert isinstance(doc["rows"][0]["value"], dict) and set(doc["rows"][0]["value"]) == {"im", "re"}
    assert cli.main(["converge", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    assert out.read_text() == text


def test_converge_resolvent_report(tmp_path, capsys):
    cfg = {"experiment": "converge", "potential": WELL, "study": "resolvent", "z": [-1.0, 1.0],
           "domain_sequence": [{"kind": "interval", "a": -h, "b": h} for h in (5.0, 10.0)]}
    assert cli.main(["converge", "--config", _write(tmp_path, cfg)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["eq"] == cli.EQ_TAGS["resolvent"]
    assert doc["verdicts"]["monotone"]


def test_cesaro_warnings_and_threads(tmp_path):
    cfg = {"experiment": "cesaro", "potential": WELL, "lambda": [-0.05, -1.2, 0.01], "R_grid": [20.0, 40.0]}
    path = _write(tmp_path, cfg)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(["cesaro", "--config", path, "--out", str(a)]) == 0
    assert cli.main(["cesaro", "--config", path, "--out", str(b), "--threads", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert len(doc["warnings"]) == 2
    assert all(w["warning"].startswith("excluded") for w in doc["warnings"])
    assert {r["lambda"] for r in doc["rows"]} == {-0.05}


def test_thread_environment_variable(tmp_path, monkeypatch, capsys):
    cfg = {"experiment": "cesaro", "potential": WELL, "lambda": -0.05, "R_grid": [10.0]}
    monkeypatch.setenv("SSF_LAB_THREADS", "many")
    assert cli.main(["cesaro", "--config", _write(tmp_path, cfg)]) == 2
    assert "SSF_LAB_THREADS" in capsys.readouterr().err
    monkeypatch.setenv("SSF_LAB_THREADS", "2")
    assert cli.main(["cesaro", "--config", _write(tmp_path, cfg)]) == 0


def test_numerical_failure_exit_3_names_operation(tmp_path, monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise ConvergenceFailure("determinant not converged", iterates=[])

    monkeypatch.setattr(cli, "ssf_det", broken)
    cfg = {"experiment": "compute", "potential": WELL, "lambda_grid": [0.5, 1.0]}
    assert cli.main(["compute", "--config", _write(tmp_path, cfg)]) == 3
    err = capsys.readouterr().err
    assert "numerical failure in ssf_det" in err


def test_kernel_check_command(capsys):
    assert cli.main(["kernel-check"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(l.startswith("PASS") for l in lines)


def test_selfcheck_command(capsys):
    assert cli.main(["selfcheck"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6
    assert all(l.startswith("PASS") for l in lines)


def test_empty_report_is_valid():
    doc = json.loads(cli.emit_report({}))
    assert doc["rows"] == [] and doc["verdicts"] == {}
    assert set(doc["versions"]) == {"numpy", "scipy", "ssf_lab"}


def test_report_serialises_special_values():
    doc = json.loads(cli.emit_report({"x": float("nan"), "y": 1 + 2j, "z": float("-inf")}))
    assert doc["x"] == "nan" and doc["y"] == {"im": 2.0, "re": 1.0} and doc["z"] == "-inf"
    v = 0.1 + 0.2
    assert json.loads(cli.emit_report({"v": v}))["v"] == v


def test_module_entry_point(tmp_path):
    cfg = {"experiment": "counting", "potential": WELL, "domain": {"kind": "interval", "a": -5.0, "b": 5.0},
           "lambda_grid": [-1.0, 0.5]}
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "ssf_lab", "counting", "--config", _write(tmp_path, cfg)],
                       capture_output=True, text=True, env=env, timeout=120)
    assert r.returncode == 0
    assert r.stdout.splitlines()[0] == ",".join(cli.CSV_HEADER)
