"""Command-line behaviour: exit codes, artifacts, manifest and report."""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from vppfra.cli import main

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
TINY = FIXTURES / "tiny.json"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """A full pipeline on the tiny fixture, shared by the report tests."""
    d = tmp_path_factory.mktemp("run")
    assert run("generate", "--scenario", TINY, "--n", 4, "--seed", 3, "--spread", 0.5, "--jobs", 1,
               "--out", d / "data.csv") == 0
    code = run("learn", "--scenario", TINY, "--data", d / "data.csv", "--max-outer", 3, "--jobs", 1,
               "--out", d / "params.json")
    assert code in (0, 3)
    assert run("assess", "--scenario", TINY, "--jobs", 1, "--out", d / "region_true.csv") == 0
    assert run("assess", "--scenario", TINY, "--params", d / "params.json", "--jobs", 1,
               "--out", d / "region_est.csv") == 0
    assert run("evaluate", "--true", d / "region_true.csv", "--est", d / "region_est.csv",
               "--params", d / "params.json", "--scenario", TINY, "--out", d / "metrics.json") == 0
    return d


def test_simulate_writes_one_dispatch_per_mine(tmp_path):
    assert run("simulate", "--scenario", TINY, "--out", tmp_path) == 0
    lines = (tmp_path / "dispatch_tiny.csv").read_text().splitlines()
    assert len(lines) == 1 + 3
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    entry = manifest["runs"]["simulate"]
    assert entry["seed"] == 7 and str(TINY) in entry["inputs"]
    assert len(entry["inputs"][str(TINY)]) == 64


def test_console_script_is_installed(tmp_path):
    exe = shutil.which("vpp-fra")
    cmd = [exe] if exe else [sys.executable, "-m", "vppfra.cli"]
    res = subprocess.run(cmd + ["simulate", "--scenario", str(TINY), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "dispatch_tiny.csv").exists()


def test_unknown_flag_is_a_usage_error(capsys):
    assert run("simulate", "--scenario", TINY, "--out", "x", "--bogus") == 1
    err = capsys.readouterr().err
    assert "unrecognized arguments: --bogus" in err and "usage:" in err
    assert "Traceback" not in err


def test_missing_subcommand_and_missing_file(capsys, tmp_path):
    assert run() == 1
    assert run("assess", "--scenario", tmp_path / "nope.json", "--out", tmp_path / "r.csv") == 1
    assert "file not found" in capsys.readouterr().err


def test_non_positive_counts_are_rejected(tmp_path, capsys):
    assert run("generate", "--scenario", TINY, "--n", 0, "--out", tmp_path / "d.csv") == 1
    assert "--n must be positive" in capsys.readouterr().err


def test_invalid_scenario_exits_one(tmp_path, capsys):
    doc = json.loads(TINY.read_text())
    doc["time"]["horizon_length"] = 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert run("simulate", "--scenario", bad, "--out", tmp_path) == 1
    assert "error" in capsys.readouterr().err


def test_learn_rejects_data_of_another_horizon(tmp_path, capsys):
    doc = json.loads(TINY.read_text())
    doc["time"]["horizon_length"] = 4
    mine = doc["mines"][0]
    for key, series in mine["profiles"].items():
        if isinstance(series, list):
            mine["profiles"][key] = series + series[-1:]
    longer = tmp_path / "long.json"
    longer.write_text(json.dumps(doc))
    assert run("generate", "--scenario", longer, "--n", 2, "--jobs", 1, "--out", tmp_path / "d.csv") == 0
    code = run("learn", "--scenario", TINY, "--data", tmp_path / "d.csv", "--jobs", 1,
               "--out", tmp_path / "p.json")
    assert code == 1
    assert "horizon mismatch" in capsys.readouterr().err


def test_learn_flags_non_convergence_but_writes_outputs(tmp_path):
    assert run("generate", "--scenario", TINY, "--n", 3, "--seed", 3, "--spread", 0.5, "--jobs", 1,
               "--out", tmp_path / "d.csv") == 0
    code = run("learn", "--scenario", TINY, "--data", tmp_path / "d.csv", "--max-outer", 1,
               "--eps", 1e-12, "--jobs", 1, "--out", tmp_path / "p.json")
    assert code == 3
    params = json.loads((tmp_path / "p.json").read_text())
    assert set(params["tiny.grid_max"]) == {"estimate", "box_lo", "box_hi", "identified"}
    header = (tmp_path / "trace.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["iter", "loss", "wall_ms"]


def test_assess_rejects_parameters_of_another_scenario(tmp_path, capsys):
    bad = tmp_path / "p.json"
    bad.write_text(json.dumps({"zz.grid_max": {"estimate": 1.0, "box_lo": 0.0, "box_hi": 2.0, "identified": "no"}}))
    assert run("assess", "--scenario", TINY, "--params", bad, "--out", tmp_path / "r.csv") == 1
    assert "does not match" in capsys.readouterr().err


def test_assess_directions_file(tmp_path):
    assert run("assess", "--scenario", TINY, "--directions", 5, "--jobs", 1, "--out", tmp_path / "r.csv") == 0
    rows = (tmp_path / "r_directions.csv").read_text().splitlines()
    assert rows[0] == "direction,support" and len(rows) == 6


def test_evaluate_needs_params_and_scenario_together(tiny_run, tmp_path, capsys):
    code = run("evaluate", "--true", tiny_run / "region_true.csv", "--est", tiny_run / "region_est.csv",
               "--params", tiny_run / "params.json", "--out", tmp_path / "m.json")
    assert code == 1
    assert "together" in capsys.readouterr().err


def test_report_on_empty_directory_names_missing_steps(tmp_path, capsys):
    assert run("report", tmp_path) == 1
    err = capsys.readouterr().err
    assert "params.json (run learn)" in err and "metrics.json (run evaluate)" in err


def test_report_is_deterministic(tiny_run, capsys):
    assert run("report", tiny_run) == 0
    first = capsys.readouterr().out
    a = (tiny_run / "summary.json").read_bytes()
    assert run("report", tiny_run) == 0
    assert capsys.readouterr().out == first
    assert (tiny_run / "summary.json").read_bytes() == a
    summary = json.loads(a)
    assert set(summary["metrics"]) == {"bc_max", "bc_min", "grid_max", "grid_min", "theta2"}
    assert "Peak-valley span" in first


def test_manifest_collects_every_step(tiny_run):
    runs = json.loads((tiny_run / "manifest.json").read_text())["runs"]
    assert {"generate", "learn", "assess", "evaluate"} <= set(runs)
    assert runs["learn"]["config"]["max_outer"] == 3


def test_pipeline_is_reproducible_across_jobs(tmp_path):
    outs = []
    for jobs in (1, 2):
        d = tmp_path / f"j{jobs}"
        assert run("generate", "--scenario", TINY, "--n", 4, "--seed", 5, "--jobs", jobs, "--out", d / "data.csv") == 0
        run("learn", "--scenario", TINY, "--data", d / "data.csv", "--max-outer", 2, "--jobs", jobs,
            "--out", d / "params.json")
        assert run("assess", "--scenario", TINY, "--params", d / "params.json", "--jobs", jobs,
                   "--out", d / "region.csv") == 0
        outs.append([(d / f).read_bytes() for f in ("data.csv", "params.json", "region.csv")])
    assert outs[0] == outs[1]
