"""Command-line behaviour: exit codes, reports and output files."""

import subprocess
import sys

import numpy as np
import pytest

from sepsim.cli import EXIT_CONFIG, EXIT_PASS, main, read_report
from sepsim.hybrid import Trace


@pytest.fixture(scope="module")
def one_step(tmp_path_factory):
    out = tmp_path_factory.mktemp("one")
    assert main(["simulate-full", "--steps", "1", "--out", str(out)]) == EXIT_PASS
    return out


def test_simulate_full_one_step(one_step):
    rep = read_report(one_step / "report.txt")
    assert rep["status"] == "PASS" and rep["steps_completed"] == 1
    for f in ("trace.csv", "impacts.csv", "steps.csv"):
        assert (one_step / f).stat().st_size > 0
    tr = Trace.from_csv(one_step / "trace.csv")
    assert tr.domain[0] == "pt" and tr.domain[-1] == "pw"
    lines = (one_step / "impacts.csv").read_text().splitlines()
    assert len(lines) == 2 and ",pt->pw," in lines[1]


def test_runs_are_deterministic(one_step, tmp_path):
    assert main(["simulate-full", "--steps", "1", "--out", str(tmp_path)]) == EXIT_PASS
    for f in ("trace.csv", "impacts.csv", "steps.csv"):
        assert (tmp_path / f).read_bytes() == (one_step / f).read_bytes()


def test_robustness_without_mass_change_is_baseline(one_step, tmp_path):
    assert main(["robustness", "--steps", "1", "--mass-delta", "0", "--out", str(tmp_path)]) == EXIT_PASS
    assert (tmp_path / "trace.csv").read_bytes() == (one_step / "trace.csv").read_bytes()
    rep = read_report(tmp_path / "report.txt")
    assert rep["max_abs_y_s"] <= 1e-6
    assert (tmp_path / "tracking.csv").exists()


def test_simulate_subsystem_replay(one_step, tmp_path):
    code = main(["simulate-subsystem", "--trace", str(one_step / "trace.csv"), "--out", str(tmp_path)])
    assert code == EXIT_PASS
    rep = read_report(tmp_path / "report.txt")
    assert rep["max_state_error"] <= 1e-6
    head = (tmp_path / "subsystem_trace.csv").read_text().splitlines()[0]
    assert head.startswith("t,domain,step,full_pk")


def test_missing_gait_is_config_error(tmp_path):
    code = main(["simulate-full", "--gait", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert read_report(tmp_path / "report.txt")["status"] == "CONFIG_ERROR"


def test_negative_mass_is_config_error(tmp_path):
    assert main(["robustness", "--mass-delta", "-500", "--steps", "1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_tolerance_and_steps(tmp_path):
    assert main(["verify", "--tol", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate-full", "--steps", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_empty_trace_is_config_error(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert main(["simulate-subsystem", "--trace", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_wrong_model_header(tmp_path):
    p = tmp_path / "m.yaml"
    p.write_text("not-a-model\nkind: amputee\n")
    assert main(["verify", "--model", str(p), "--samples", "0", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_verify_zero_samples_vacuous(tmp_path, capsys):
    assert main(["verify", "--samples", "0", "--out", str(tmp_path)]) == EXIT_PASS
    rep = read_report(tmp_path / "report.txt")
    assert rep["status"] == "PASS"
    assert all(c["samples"] == 0 for c in rep["checks"])
    assert "PASS" in capsys.readouterr().out


def test_verify_small(tmp_path):
    assert main(["verify", "--samples", "3", "--seed", "5", "--out", str(tmp_path)]) == EXIT_PASS
    rep = read_report(tmp_path / "report.txt")
    names = {c["name"] for c in rep["checks"]}
    assert len(names) >= 5
    assert all(np.isfinite(v) for c in rep["checks"] for v in c["residuals"].values())


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sepsim.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("sepsim ")
    r = subprocess.run([sys.executable, "-m", "sepsim.cli", "bogus"], capture_output=True, text=True)
    assert r.returncode == 2
