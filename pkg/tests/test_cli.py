"""Command-line entry points: artifacts, exit statuses, and byte determinism."""

import json

import pytest
from click.testing import CliRunner

from btcell import fixtures
from btcell.cli import main


@pytest.fixture()
def docs(tmp_path):
    paths = {}
    for name, doc in (
        ("transcript", fixtures.gearset_transcript(3)),
        ("setup", fixtures.gearset_setup()),
        ("scenario", fixtures.gearset_scenario(3, "III", seed=2)),
        ("gold", fixtures.gearset_gold(3)),
    ):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(doc))
        paths[name] = str(path)
    paths["tmp"] = tmp_path
    return paths


def _invoke(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def test_plan_writes_bundle(docs):
    out = docs["tmp"] / "plan"
    result = _invoke(["plan", "--transcript", docs["transcript"],
                      "--setup", docs["setup"], "--out", str(out)])
    assert result.exit_code == 0
    bundle = json.loads((out / "plan.json").read_text())
    assert len(bundle["subtasks"]) == 3
    assert len(bundle["subtrees"]) == 3
    assert all(e["verdict"] == "approve" for e in bundle["review_log"])


def test_plan_bad_transcript_exits_nonzero(docs, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"keyframes": [], "objects": []}))
    result = CliRunner().invoke(main, ["plan", "--transcript", str(bad),
                                       "--setup", docs["setup"]])
    assert result.exit_code == 1


def test_plan_scripted_gate_with_fault_backend_logs_refines(docs):
    out = docs["tmp"] / "plan_faulty"
    result = _invoke(["plan", "--transcript", docs["transcript"],
                      "--setup", docs["setup"], "--backend", "faulty",
                      "--gate", "scripted", "--gold", docs["gold"],
                      "--seed", "3", "--out", str(out)])
    assert result.exit_code == 0
    bundle = json.loads((out / "plan_faulty" / "plan.json").read_text()) \
        if (out / "plan_faulty").exists() else json.loads((out / "plan.json").read_text())
    assert bundle["subtasks"] == fixtures.gearset_gold(3)["subtasks"]


def test_validate_reports_pass_and_fail(docs):
    plan_out = docs["tmp"] / "plan"
    _invoke(["plan", "--transcript", docs["transcript"], "--setup", docs["setup"],
             "--out", str(plan_out)])
    bundle = json.loads((plan_out / "plan.json").read_text())
    tree_path = docs["tmp"] / "tree.json"
    tree_path.write_text(json.dumps(bundle["subtrees"][0]))
    good = _invoke(["validate", "--tree", str(tree_path), "--setup", docs["setup"]])
    assert good.exit_code == 0
    report = json.loads(good.output)
    assert report["svr"]["passed"] and report["lcr"]["passed"]

    broken = bundle["subtrees"][0]
    broken["root"]["children"] = []
    tree_path.write_text(json.dumps(broken))
    bad = _invoke(["validate", "--tree", str(tree_path), "--setup", docs["setup"]])
    bad_report = json.loads(bad.output)
    assert not bad_report["svr"]["passed"]
    assert bad_report["svr"]["violations"][0]["path"] == "root"


def test_run_is_byte_deterministic(docs):
    out1, out2 = docs["tmp"] / "r1", docs["tmp"] / "r2"
    for out in (out1, out2):
        result = _invoke(["run", "--transcript", docs["transcript"],
                          "--setup", docs["setup"], "--scenario", docs["scenario"],
                          "--out", str(out)])
        assert result.exit_code == 0
    assert (out1 / "trace.json").read_bytes() == (out2 / "trace.json").read_bytes()
    assert (out1 / "metrics.json").read_bytes() == (out2 / "metrics.json").read_bytes()
    metrics = json.loads((out1 / "metrics.json").read_text())
    assert metrics["TS"] is True


def test_run_seed_flag_overrides_scenario(docs):
    out1, out2 = docs["tmp"] / "s1", docs["tmp"] / "s2"
    for out, seed in ((out1, "2"), (out2, "9")):
        _invoke(["run", "--transcript", docs["transcript"], "--setup", docs["setup"],
                 "--scenario", docs["scenario"], "--seed", seed, "--out", str(out)])
    m1 = json.loads((out1 / "metrics.json").read_text())
    m2 = json.loads((out2 / "metrics.json").read_text())
    assert m1["TS"] and m2["TS"]  # both succeed under zero noise


def test_replay_renders_stage_timeline(docs):
    out = docs["tmp"] / "r1"
    _invoke(["run", "--transcript", docs["transcript"], "--setup", docs["setup"],
             "--scenario", docs["scenario"], "--out", str(out)])
    result = _invoke(["replay", "--trace", str(out / "trace.json")])
    assert result.exit_code == 0
    assert "rollback" in result.output
    assert "stage 2 complete" in result.output
    assert "run end: success" in result.output


def test_bench_emits_fixed_columns(docs):
    result = _invoke(["bench", "--lengths", "1", "--kinds", "none,I",
                      "--trials", "2", "--seed", "5"])
    assert result.exit_code == 0
    lines = result.output.splitlines()
    assert lines[0] == "task_length\tdisturbance\ttrial\tTS\tCR\tDRR\tticks\treplans"
    assert len([l for l in lines[1:] if l and not l.startswith("task_length")]) >= 4


def test_bench_json_is_deterministic(docs):
    args = ["bench", "--lengths", "1", "--kinds", "none", "--trials", "2",
            "--seed", "4", "--format", "json"]
    assert _invoke(args).output == _invoke(args).output
