"""Batch entry points: plan generation, validation, single runs, benchmark
sweeps, trace replay, and serving the HTTP API.

All machine-readable outputs are emitted with sorted keys so repeated
invocations over identical inputs are byte-identical.
"""

from __future__ import annotations

import json
import pathlib
import sys

import click

from . import bt, fixtures
from .errors import BtcellError
from .executor import ExecutionConfig, bench, run
from .planner import (
    AutoApproveGate,
    FaultyBackend,
    RuleBackend,
    ScriptedFeedbackGate,
    Subtask,
    generate_plan,
    make_replanner,
    validate_logical,
    validate_syntactic,
)
from .sim import NoiseModel, WorkcellEnv
from .world import default_domain, init_state


def _dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _load(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def _emit(text: str, out: str | None, name: str) -> None:
    if out is None:
        click.echo(text, nl=False)
    else:
        directory = pathlib.Path(out)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / name).write_text(text, encoding="utf-8")


def _make_backend(name: str, seed: int, domain):
    if name == "rule":
        return RuleBackend(domain)
    if name == "faulty":
        return FaultyBackend(RuleBackend(domain), seed=seed)
    raise click.UsageError(f"unknown backend {name!r}")


def _make_gate(name: str, gold_doc: dict | None):
    if name == "auto":
        return AutoApproveGate()
    if name == "scripted":
        gold = None
        if gold_doc is not None:
            gold = [Subtask.from_doc(t) for t in gold_doc.get("subtasks", [])]
        return ScriptedFeedbackGate(gold)
    raise click.UsageError(f"unknown gate {name!r}")


@click.group()
def main() -> None:
    """Behavior-tree planning and supervisory execution for a simulated workcell."""


@main.command("plan")
@click.option("--transcript", required=True, type=click.Path(exists=True))
@click.option("--setup", required=True, type=click.Path(exists=True))
@click.option("--backend", default="rule", show_default=True)
@click.option("--gate", default="auto", show_default=True,
              type=click.Choice(["auto", "scripted"]))
@click.option("--gold", default=None, type=click.Path(exists=True),
              help="Gold sidecar for the scripted gate.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=None, type=click.Path())
def cmd_plan(transcript, setup, backend, gate, gold, seed, out):
    """Generate a reviewed plan bundle from a demonstration transcript."""
    domain = default_domain()
    try:
        bundle = generate_plan(
            _load(transcript), _load(setup),
            _make_backend(backend, seed, domain),
            gate=_make_gate(gate, _load(gold) if gold else None),
            domain=domain,
        )
    except (BtcellError, json.JSONDecodeError, KeyError) as exc:
        click.echo(f"planning failed: {exc}", err=True)
        sys.exit(1)
    _emit(_dumps(bundle.to_doc()), out, "plan.json")


@main.command("validate")
@click.option("--tree", required=True, type=click.Path(exists=True),
              help="Serialized behavior-tree document.")
@click.option("--setup", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path())
def cmd_validate(tree, setup, out):
    """Check a tree document for syntactic validity and logical coherence."""
    domain = default_domain()
    document = _load(tree)
    state, constraints = init_state(_load(setup), domain)
    syntactic = validate_syntactic(document.get("tree", document), domain)
    report = {"svr": syntactic.to_doc()}
    if syntactic.passed:
        parsed = bt.deserialize(document.get("tree", document))
        # The subtask's skill constraint is granted during interpretation, so
        # a standalone check must supply it too.
        subtask_doc = parsed.metadata.get("subtask")
        if subtask_doc is not None:
            constraints.atoms.add(Subtask.from_doc(subtask_doc).constraint())
        report["lcr"] = validate_logical(parsed, state, domain, constraints).to_doc()
    _emit(_dumps(report), out, "validation.json")


def _build_run(transcript, setup, scenario_doc, backend_name, seed, domain):
    backend = _make_backend(backend_name, seed, domain)
    plan = generate_plan(_load(transcript), _load(setup), backend, domain=domain)
    noise = NoiseModel.from_doc(scenario_doc.get("perception_noise", {}))
    env = WorkcellEnv(fixtures.gearset_workcell(), domain, seed=seed, noise=noise)
    cfg = ExecutionConfig(seed=seed)
    return plan, env, cfg, make_replanner(backend, domain)


@main.command("run")
@click.option("--transcript", required=True, type=click.Path(exists=True))
@click.option("--setup", required=True, type=click.Path(exists=True))
@click.option("--scenario", default=None, type=click.Path(exists=True))
@click.option("--backend", default="rule", show_default=True)
@click.option("--seed", default=None, type=int,
              help="Overrides the scenario seed when given.")
@click.option("--out", default=None, type=click.Path())
def cmd_run(transcript, setup, scenario, backend, seed, out):
    """Execute one plan against the simulated workcell."""
    domain = default_domain()
    scenario_doc = _load(scenario) if scenario else {}
    effective_seed = seed if seed is not None else int(scenario_doc.get("seed", 0))
    try:
        plan, env, cfg, replanner = _build_run(
            transcript, setup, scenario_doc, backend, effective_seed, domain)
        trace, metrics = run(plan, env, cfg, replanner, domain, scenario_doc)
    except BtcellError as exc:
        click.echo(f"run failed: {exc}", err=True)
        sys.exit(1)
    _emit(_dumps(trace), out, "trace.json")
    _emit(_dumps(metrics.to_doc()), out, "metrics.json")


@main.command("bench")
@click.option("--lengths", default="1,3,5", show_default=True)
@click.option("--kinds", default="none,I,II,III", show_default=True)
@click.option("--trials", default=15, show_default=True, type=int)
@click.option("--noise", default=0.0, show_default=True, type=float,
              help="Perception noise level for every cell.")
@click.option("--backend", default="rule", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--format", "fmt", default="table", show_default=True,
              type=click.Choice(["table", "json"]))
@click.option("--out", default=None, type=click.Path())
def cmd_bench(lengths, kinds, trials, noise, backend, seed, fmt, out):
    """Run the task-length x disturbance trial matrix on the gearset fixture."""
    domain = default_domain()
    backend_obj = _make_backend(backend, seed, domain)
    lengths_list = [int(v) for v in lengths.split(",") if v]
    kinds_list = [v.strip() for v in kinds.split(",") if v.strip()]
    plans = {
        n: generate_plan(fixtures.gearset_transcript(n), fixtures.gearset_setup(),
                         backend_obj, domain=domain)
        for n in lengths_list
    }
    matrix = [(n, kind) for n in lengths_list for kind in kinds_list]

    def scenario_builder(n, kind, trial_seed_value):
        return fixtures.gearset_scenario(n, kind, seed=trial_seed_value,
                                         noise_level=noise)

    def env_builder(scenario):
        return WorkcellEnv(fixtures.gearset_workcell(), domain,
                           seed=int(scenario["seed"]),
                           noise=NoiseModel.from_doc(scenario["perception_noise"]))

    results = bench(plans, scenario_builder, env_builder, matrix, trials,
                    ExecutionConfig(seed=seed), make_replanner(backend_obj, domain),
                    domain)
    if fmt == "json":
        _emit(_dumps(results.to_doc()), out, "bench.json")
    else:
        text = results.to_table() + "\n\n" + results.summary_table() + "\n"
        _emit(text, out, "bench.txt")


@main.command("replay")
@click.option("--trace", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path())
def cmd_replay(trace, out):
    """Render an exported trace as a human-readable stage timeline."""
    events = _load(trace)
    lines = []
    for event in events:
        kind = event.get("type")
        t = event.get("t", 0)
        if kind == "stage_complete":
            lines.append(f"[{t:5d}] stage {event['stage']} complete: {event['goal']}")
        elif kind == "rollback":
            lines.append(f"[{t:5d}] rollback: stage {event['from']} -> {event['to']}")
        elif kind == "replan":
            lines.append(f"[{t:5d}] replan stage {event['stage']}")
        elif kind == "disturbance":
            lines.append(f"[{t:5d}] disturbance {event['kind']}: {event['payload']}")
        elif kind == "self_recovery":
            action = event["action"]
            lines.append(f"[{t:5d}] self-recovery via {action['name']}"
                         f"({', '.join(action['args'])}) for {event['atom']}")
        elif kind == "state_update":
            removed = event.get("removed_p", []) + event.get("removed_r", [])
            if removed:
                lines.append(f"[{t:5d}] belief update: removed {', '.join(removed)}")
        elif kind == "run_end":
            verdict = "success" if event.get("ts") else "failure"
            lines.append(f"[{t:5d}] run end: {verdict} ({event.get('reason', '')})")
    _emit("\n".join(lines) + "\n", out, "replay.txt")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8750, show_default=True, type=int)
def cmd_serve(host, port):
    """Serve the session API for the browser console."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
