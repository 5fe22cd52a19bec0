import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from mjc.cli import load_solution, main


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_simulate_writes_paths(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--epsilon", "0.5", "--dt", "0.05", "--paths", "3", "--record-every", "4",
                 "--out", str(out)]) == 0
    r = rows(out)
    assert r[0] == ["path_id", "time", "x", "y"]
    assert len(r) == 1 + 3 * 6  # 20 steps recorded every 4, plus the start
    assert float(r[-1][1]) == pytest.approx(1.0)


def test_ergodic_writes_samples_and_summary(tmp_path, capsys):
    out = tmp_path / "mu.csv"
    assert main(["ergodic", "--n", "500", "--out", str(out)]) == 0
    assert len(rows(out)) == 501
    summary = json.loads((tmp_path / "mu.json").read_text())
    assert {"mean", "median", "iqr"} <= set(summary)
    assert json.loads(capsys.readouterr().out) == summary


def test_effective_closed_form(capsys):
    assert main(["effective", "--x-grid=-1:1:3"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["x_nodes"] == [-1.0, 0.0, 1.0]
    assert d["g_bar"][1] == pytest.approx(0.12836, abs=1e-5)


def test_solve_and_value_with_hjb_policy(tmp_path, capsys):
    sol = tmp_path / "u.csv"
    assert main(["solve-hjb", "--xdomain=-4:4:81", "--levels", "6", "--out", str(sol)]) == 0
    loaded = load_solution(sol, 1.0)
    assert loaded.values.shape == (6, 81)
    assert main(["value", "--policy", f"hjb:{sol}", "--paths", "200", "--discount", "dpp"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("epsilon,policy")
    mean = float(out[1].split(",")[5])
    assert abs(mean - loaded.values[-1, 40]) < 0.2


def test_two_scale_solve_and_value(tmp_path, capsys):
    sol = tmp_path / "u2.csv"
    assert main(["solve-hjb", "--epsilon", "0.5", "--xdomain=-4:4:21", "--ydomain=-6:6:11", "--levels", "3",
                 "--out", str(sol)]) == 0
    r = rows(sol)
    assert r[0] == ["tau", "x", "y", "u"] and len(r) == 1 + 3 * 21 * 11
    assert main(["value", "--epsilon", "0.5", "--policy", "const:0.5", "--paths", "100", "--start", "0,0.5,1"]) == 0
    line = capsys.readouterr().out.splitlines()[1].split(",")
    assert line[0] == "0.5" and line[3:5] == ["0.5", "1.0"]
    assert main(["value", "--policy", f"hjb:{sol}"]) == 2


def test_weak_report_and_exit_code(tmp_path, capsys):
    code = main(["weak", "--model", "LIN0", "--paths", "400", "--eps-list", "0.5,0.2", "--set", "dt_mc=0.05",
                 "--out-dir", str(tmp_path)])
    lines = capsys.readouterr().out.splitlines()
    assert any(l.startswith(("PASS", "FAIL")) and "weak_level" in l for l in lines)
    report = json.loads((tmp_path / "report.json").read_text())
    assert code == (0 if all(v["pass"] for v in report["verdicts"].values()) else 1)
    assert (tmp_path / "weak.csv").exists()


def test_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "LIN0", "paths": 300, "eps_list": [0.5, 0.2], "dt_mc": 0.05}))
    main(["weak", "--config", str(cfg), "--seed", "3", "--out-dir", str(tmp_path)])
    fp = json.loads((tmp_path / "report.json").read_text())["fingerprint"]
    assert fp["seed"] == 3 and fp["config"]["model"] == "LIN0"


@pytest.mark.parametrize("argv", [
    ["simulate", "--model", "NOPE"],
    ["weak", "--set", "bogus=1"],
    ["weak", "--eps-list", "0.1,0.5"],
    ["value", "--policy", "greedy"],
])
def test_errors_exit_with_code_2(argv, capsys):
    assert main(argv) == 2
    assert "mjc: error:" in capsys.readouterr().err


def test_console_script_installed():
    exe = shutil.which("mjc")
    assert exe is not None
    res = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "ergodic", "effective", "solve-hjb", "value", "sweep", "weak", "all"):
        assert cmd in res.stdout
