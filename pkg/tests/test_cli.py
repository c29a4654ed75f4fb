"""End-to-end CLI pipeline on the committed fixture.

A session-scoped fixture runs the whole chain once (calibrate ->
sensitivity -> plan -> sweep -> simulate -> eval -> infer); tests then
assert on the artifacts, the run manifests, and the exit-code contract.
"""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from click.testing import CliRunner

from adaptinfer import __version__, load_model, read_aat
from adaptinfer.cli import EXIT_INFEASIBLE, EXIT_INVALID, cli
from adaptinfer.planner import memory_cost
from adaptinfer.sensitivity import read_records_csv


def run_cli(args):
    return CliRunner().invoke(cli, [str(a) for a in args])


@pytest.fixture(scope="session")
def pipeline(fixture_paths, tmp_path_factory):
    """Artifacts of one full CLI pass over the fixture bundle."""
    root = tmp_path_factory.mktemp("cli")
    manifest = str(fixture_paths["manifest"])
    eval_set = str(fixture_paths["eval"])
    calib_set = str(fixture_paths["calib"])
    dirs = {name: root / name for name in
            ("inspect", "calib", "sens", "plan", "sweep", "sim",
             "eval", "infer")}

    steps = [
        ["inspect", "--model", manifest, "--out-dir", dirs["inspect"]],
        ["calibrate", "--model", manifest, "--calib", calib_set,
         "--bins", 16, "--out-dir", dirs["calib"]],
        ["sensitivity", "--model", manifest, "--dataset", eval_set,
         "--calib", calib_set, "--out-dir", dirs["sens"]],
    ]
    for step in steps:
        result = run_cli(step)
        assert result.exit_code == 0, f"{step[0]} failed:\n{result.output}"

    table = dirs["sens"] / "sensitivity.csv"
    trace = root / "trace.csv"
    total = memory_cost(load_model(manifest)).total_bytes
    trace.write_text("timestamp_ms,memory_budget_bytes\n"
                     f"0,{total}\n10,{int(total * 0.7)}\n20,50000\n")
    steps = [
        ["plan", "--model", manifest, "--table", table, "--budget", "70%",
         "--joint-eval", "--dataset", eval_set, "--out-dir", dirs["plan"]],
        ["sweep", "--model", manifest, "--table", table,
         "--budget-list", "100%,80%,65%", "--joint-eval",
         "--dataset", eval_set, "--out-dir", dirs["sweep"]],
        ["simulate", "--model", manifest, "--table", table, "--trace", trace,
         "--dataset", eval_set, "--out-dir", dirs["sim"]],
        ["eval", "--model", manifest, "--dataset", eval_set,
         "--plan", dirs["plan"] / "plan.json", "--out-dir", dirs["eval"]],
        ["infer", "--model", manifest, "--images", eval_set,
         "--plan", dirs["plan"] / "plan.json", "--out-dir", dirs["infer"]],
    ]
    for step in steps:
        result = run_cli(step)
        assert result.exit_code == 0, f"{step[0]} failed:\n{result.output}"
    return {"root": root, "table": table, "trace": trace, **dirs}


def test_every_command_writes_a_run_manifest(pipeline):
    for name in ("inspect", "calib", "sens", "plan", "sweep", "sim",
                 "eval", "infer"):
        doc = json.loads((pipeline[name] / "run_manifest.json").read_text())
        assert doc["tool_version"] == __version__
        assert doc["argv"][0] == doc["command"]
        assert doc["outputs"], name
        for out_name in doc["outputs"]:
            assert (pipeline[name] / out_name).exists(), (name, out_name)
        assert "timestamp" not in json.dumps(doc)


def test_inspect_json_matches_cost_model(pipeline, fixture_paths):
    doc = json.loads((pipeline["inspect"] / "inspect.json").read_text())
    report = memory_cost(load_model(fixture_paths["manifest"]))
    assert doc["param_bytes"] == report.param_bytes
    assert doc["activation_bytes"] == report.activation_bytes
    assert doc["total_bytes"] == report.total_bytes


def test_calibrate_outputs(pipeline):
    profiles = json.loads((pipeline["calib"] / "profiles.json").read_text())
    assert sorted(profiles) == ["relu1", "relu2", "relu3", "relu4"]
    for layer_id, profile in profiles.items():
        assert profile["layer_id"] == layer_id
        assert profile["sample_count"] > 0
        hist = (pipeline["calib"] / f"hist_{layer_id}.csv").read_text()
        rows = hist.strip().splitlines()
        assert rows[0] == "bin_lo,bin_hi,count"
        assert len(rows) == 1 + 17  # zero bin + 16 range bins
        first = rows[1].split(",")
        assert (float(first[0]), float(first[1])) == (0.0, 0.0)


def test_sensitivity_csv_round_trips(pipeline, fixture_paths):
    records = read_records_csv(pipeline["table"])
    # 4 activation layers x 5 sparsity levels x 5 precisions
    assert len(records) == 100
    layers = {r.layer_id for r in records}
    assert layers == {"relu1", "relu2", "relu3", "relu4"}


def test_plan_json_meets_budget(pipeline):
    doc = json.loads((pipeline["plan"] / "plan.json").read_text())
    assert doc["projected"]["memory_bytes"] <= doc["budget"]["memory_bytes"]
    assert doc["assignments"]
    assert 0.0 <= doc["joint_accuracy"] <= 1.0
    manifest = json.loads((pipeline["plan"] / "run_manifest.json").read_text())
    assert manifest["parameters"]["budget"] == "70%"
    assert manifest["parameters"]["budget_bytes"] == doc["budget"]["memory_bytes"]


def test_sweep_csv_columns_and_monotonicity(pipeline):
    with open(pipeline["sweep"] / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["budget", "memory", "latency_proxy", "accuracy"]
    assert len(rows) == 3
    memories = [int(r["memory"]) for r in rows]
    budgets = [int(r["budget"]) for r in rows]
    assert budgets == sorted(budgets, reverse=True)
    assert memories == sorted(memories, reverse=True)
    for r in rows:
        assert int(r["memory"]) <= int(r["budget"])
        assert 0.0 <= float(r["accuracy"]) <= 1.0
        assert float(r["latency_proxy"]) > 0


def test_simulate_log_has_floor_install(pipeline):
    entries = [json.loads(line) for line in
               (pipeline["sim"] / "controller_log.jsonl").read_text().splitlines()]
    assert [e["feasible"] for e in entries] == [True, True, False]
    last = entries[-1]
    assert last["shortfall_bytes"] > 0
    assert "minimum-memory" in last["note"]
    assert sum(e["inferences"] for e in entries) == 256


def test_eval_and_infer_artifacts(pipeline, fixture_paths):
    ev = json.loads((pipeline["eval"] / "eval.json").read_text())
    assert ev["sample_count"] == 256
    assert 0.0 <= ev["accuracy"] <= 1.0
    pred = json.loads((pipeline["infer"] / "predictions.json").read_text())
    assert len(pred["predictions"]) == 256
    assert np.asarray(pred["outputs"]).shape == (256, 4)


def test_replay_regenerates_outputs_byte_identically(pipeline):
    plan_path = pipeline["plan"] / "plan.json"
    before = plan_path.read_bytes()
    result = run_cli(["replay", pipeline["plan"] / "run_manifest.json"])
    assert result.exit_code == 0, result.output
    assert plan_path.read_bytes() == before


def test_percent_budget_equals_explicit_bytes(pipeline, fixture_paths,
                                              tmp_path):
    total = memory_cost(load_model(fixture_paths["manifest"])).total_bytes
    explicit = tmp_path / "explicit"
    result = run_cli(["plan", "--model", fixture_paths["manifest"],
                      "--table", pipeline["table"],
                      "--budget", int(total * 0.7), "--out-dir", explicit])
    assert result.exit_code == 0
    a = json.loads((pipeline["plan"] / "plan.json").read_text())
    b = json.loads((explicit / "plan.json").read_text())
    assert a["assignments"] == b["assignments"]
    assert a["projected"]["memory_bytes"] == b["projected"]["memory_bytes"]


def test_plan_slack_budget_empty_plan(pipeline, fixture_paths, tmp_path):
    result = run_cli(["plan", "--model", fixture_paths["manifest"],
                      "--table", pipeline["table"], "--budget", "100%",
                      "--out-dir", tmp_path])
    assert result.exit_code == 0
    doc = json.loads((tmp_path / "plan.json").read_text())
    assert doc["assignments"] == []


def test_plan_infeasible_exit_code(pipeline, fixture_paths, tmp_path):
    result = run_cli(["plan", "--model", fixture_paths["manifest"],
                      "--table", pipeline["table"], "--budget", 10_000,
                      "--out-dir", tmp_path])
    assert result.exit_code == EXIT_INFEASIBLE
    assert "best achievable" in result.output


def test_missing_input_exit_code(fixture_paths, tmp_path):
    result = run_cli(["plan", "--model", fixture_paths["manifest"],
                      "--table", tmp_path / "nope.csv", "--budget", "50%",
                      "--out-dir", tmp_path])
    assert result.exit_code == EXIT_INVALID


def test_sweep_all_infeasible_exit_code(pipeline, fixture_paths, tmp_path):
    result = run_cli(["sweep", "--model", fixture_paths["manifest"],
                      "--table", pipeline["table"], "--budget-list",
                      "10000,20000", "--out-dir", tmp_path])
    assert result.exit_code == EXIT_INFEASIBLE


def test_sweep_skips_infeasible_but_keeps_feasible(pipeline, fixture_paths,
                                                   tmp_path):
    result = run_cli(["sweep", "--model", fixture_paths["manifest"],
                      "--table", pipeline["table"], "--budget-list",
                      "100%,10000", "--out-dir", tmp_path])
    assert result.exit_code == 0
    with open(tmp_path / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1


def test_infer_without_plan_matches_goldens(fixture_paths, tmp_path):
    result = run_cli(["infer", "--model", fixture_paths["manifest"],
                      "--images", fixture_paths["eval"],
                      "--out-dir", tmp_path])
    assert result.exit_code == 0
    doc = json.loads((tmp_path / "predictions.json").read_text())
    golden = read_aat(fixture_paths["golden_logits"])
    assert np.max(np.abs(np.asarray(doc["outputs"]) - golden)) <= 1e-6


def test_bad_precision_label_is_usage_error(fixture_paths, tmp_path):
    result = run_cli(["sensitivity", "--model", fixture_paths["manifest"],
                      "--dataset", fixture_paths["eval"],
                      "--precisions", "fp32,int3", "--out-dir", tmp_path])
    assert result.exit_code == EXIT_INVALID


def test_console_script_inspect_builtin(tmp_path):
    """The installed entry point works as a real subprocess."""
    proc = subprocess.run(
        [sys.executable, "-m", "adaptinfer.cli", "inspect",
         "--model", "resnet18", "--out-dir", str(tmp_path)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    doc = json.loads((tmp_path / "inspect.json").read_text())
    assert doc["name"] == "resnet18"
    assert doc["total_bytes"] > 0


def test_console_script_version():
    proc = subprocess.run([sys.executable, "-m", "adaptinfer.cli",
                           "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert __version__ in proc.stdout
