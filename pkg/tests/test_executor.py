"""Reactive execution: extension guards, self-recovery, rollback, replanning
bounds, metrics, trace replay, and the benchmark sweep."""

import pytest

from btcell import bt, executor, fixtures, planner
from btcell.atoms import Atom
from btcell.executor import (
    BENCH_COLUMNS,
    ExecutionConfig,
    Executor,
    bench,
    compute_metrics,
    extend,
    self_recovery_probe,
    trial_seed,
)
from btcell.sim import Disturbance, NoiseModel, WorkcellEnv


def _env(domain, seed=0, noise=None):
    return WorkcellEnv(fixtures.gearset_workcell(), domain, seed=seed, noise=noise)


def _run(domain, rule_backend, plan, kind="none", task_length=5, seed=0):
    scenario = fixtures.gearset_scenario(task_length, kind, seed=seed)
    env = _env(domain, seed=seed)
    return executor.run(plan, env, ExecutionConfig(seed=seed),
                        planner.make_replanner(rule_backend, domain),
                        domain, scenario)


@pytest.fixture(scope="module")
def plans(domain, rule_backend):
    return {
        n: planner.generate_plan(fixtures.gearset_transcript(n),
                                 fixtures.gearset_setup(), rule_backend,
                                 domain=domain)
        for n in (1, 3, 5)
    }


# --- extension ---

def test_extend_prepends_achieved_subgoal_conditions(gearset_plan):
    achieved = gearset_plan.goals[:2]
    extended = extend(gearset_plan.subtrees[2], achieved)
    root = extended.root
    assert root.kind == bt.SEQUENCE
    assert [c.node_id for c in root.children[:2]] == ["ext/0", "ext/1"]
    assert [c.atom for c in root.children[:2]] == achieved
    assert root.children[2] is gearset_plan.subtrees[2].root


def test_extend_stage_zero_is_plain_wrapper(gearset_plan):
    extended = extend(gearset_plan.subtrees[0], [])
    assert extended.root.children == [gearset_plan.subtrees[0].root]


def test_extension_guard_blocks_stage_body(gearset_plan, domain):
    # With a violated prefix condition the stage body is never visited.
    extended = extend(gearset_plan.subtrees[2], gearset_plan.goals[:2])

    class NoBelief:
        def holds(self, atom):
            return False

        def apply_action_success(self, action, payload):
            pass

    class NeverRuntime:
        def poll(self, node_id):
            raise AssertionError("stage body must not run")

        start = resume = suspend = consume = poll

    result = bt.tick_traced(extended, NoBelief(), NeverRuntime())
    assert result.status is bt.Status.FAILURE
    assert [n for n, _ in result.visited] == ["ext/0", "ext/root"]


def test_self_recovery_probe_finds_restoring_unit(gearset_plan):
    violated = Atom.of("pose_is_known", "gear1")
    unit = self_recovery_probe(gearset_plan.subtrees[0], violated)
    assert unit is not None
    actions = [n.action.name for n in unit.iter_nodes() if n.kind == bt.ACTION]
    assert actions == ["retrieve_pose"]
    assert self_recovery_probe(gearset_plan.subtrees[0],
                               Atom.of("pose_is_known", "base")) is None


# --- nominal runs ---

@pytest.mark.parametrize("task_length", [1, 3, 5])
def test_nominal_run_completes(plans, domain, rule_backend, task_length):
    trace, metrics = _run(domain, rule_backend, plans[task_length],
                          task_length=task_length)
    assert metrics.ts and metrics.cr == 1.0 and metrics.replans == 0
    stages = [e["stage"] for e in trace if e["type"] == "stage_complete"]
    assert stages == list(range(task_length))


def test_trace_supports_pure_event_folding(plans, domain, rule_backend):
    """A consumer must be able to rebuild the believed atom set from the
    trace alone: one run_start snapshot plus per-event deltas."""
    trace, _ = _run(domain, rule_backend, plans[3], task_length=3)
    assert trace[0]["type"] == "run_start"
    start = trace[0]
    assert start["stages"] == 3 and len(start["goals"]) == 3
    atoms = set(start["atoms"]["P"]) | set(start["atoms"]["R"])
    assert "gear1" in start["objects"]
    for event in trace[1:]:
        if event["type"] == "state_update":
            atoms -= set(event["removed_p"]) | set(event["removed_r"])
            atoms |= set(event["added_p"]) | set(event["added_r"])
        elif event["type"] == "belief_update":
            assert event["added"] or event["removed"]
            atoms -= set(event["removed"])
            atoms |= set(event["added"])
    for goal in start["goals"]:
        assert goal in atoms


def test_runs_are_deterministic(plans, domain, rule_backend):
    first = _run(domain, rule_backend, plans[3], kind="III", task_length=3, seed=5)
    second = _run(domain, rule_backend, plans[3], kind="III", task_length=3, seed=5)
    assert first[0] == second[0]
    assert first[1] == second[1]


# --- disturbance recovery ---

def test_disturbance_i_self_recovery_sequence(plans, domain, rule_backend):
    trace, metrics = _run(domain, rule_backend, plans[5], kind="I")
    assert metrics.ts and metrics.drr == 1.0 and metrics.drr_applicable
    kinds = [e["type"] for e in trace]
    i_dist = kinds.index("disturbance")
    tail = trace[i_dist:]
    # The approach is suspended, the pose atom is re-fetched, then the
    # suspended action resumes and completes.
    recovery = next(e for e in tail if e["type"] == "self_recovery")
    assert recovery["action"]["name"] == "retrieve_pose"
    resume = next(e for e in tail if e["type"] == "action_resume")
    resumed_done = next(e for e in tail if e["type"] == "action_complete"
                        and e["node"] == resume["node"])
    assert tail.index(recovery) < tail.index(resume) < tail.index(resumed_done)


def test_disturbance_ii_position_refresh(plans, domain, rule_backend):
    trace, metrics = _run(domain, rule_backend, plans[5], kind="II")
    assert metrics.ts and metrics.drr == 1.0
    dist = next(e for e in trace if e["type"] == "disturbance")
    obj = dist["payload"]["object"]
    after = trace[trace.index(dist):]
    assert any(obj in e.get("positions_updated", []) for e in after
               if e["type"] == "state_update")
    # Uninvolved displacement must not interrupt the running action.
    assert not any(e["type"] in ("rollback", "replan") for e in after)


def test_disturbance_iii_rolls_back_to_violated_stage(plans, domain, rule_backend):
    trace, metrics = _run(domain, rule_backend, plans[5], kind="III")
    assert metrics.ts and metrics.drr == 1.0
    rollback = next(e for e in trace if e["type"] == "rollback")
    # The detached relation belongs to stage 2 (compound gear on shaft2).
    assert rollback["from"] == 4 and rollback["to"] == 2
    after = trace[trace.index(rollback):]
    assert any(e["type"] == "replan" and e["stage"] == 2 for e in after)
    recompleted = [e["stage"] for e in after if e["type"] == "stage_complete"]
    assert recompleted == [2, 3, 4]


def test_live_disturbance_matches_scripted_trace(plans, domain, rule_backend):
    # A disturbance posted mid-run is indistinguishable from the scripted
    # one aside from bookkeeping order around the injection tick.
    scripted_trace, scripted_metrics = _run(domain, rule_backend, plans[3],
                                            kind="III", task_length=3, seed=4)
    env = _env(domain, seed=4)
    scenario = fixtures.gearset_scenario(3, "none", seed=4)
    live = Executor(plans[3], env, ExecutionConfig(seed=4),
                    planner.make_replanner(rule_backend, domain), domain, scenario)
    live.post_disturbance(Disturbance.from_doc(fixtures._disturbance_spec(3, "III")[0]))
    live_trace, live_metrics = live.run()
    assert live_metrics == scripted_metrics
    key = [(e["type"], e.get("stage"), e.get("kind")) for e in live_trace
           if e["type"] in ("disturbance", "rollback", "replan", "stage_complete",
                            "self_recovery", "run_end")]
    scripted_key = [(e["type"], e.get("stage"), e.get("kind")) for e in scripted_trace
                    if e["type"] in ("disturbance", "rollback", "replan", "stage_complete",
                                     "self_recovery", "run_end")]
    assert key == scripted_key


def test_replan_bound_converts_livelock_to_failure(plans, domain, rule_backend):
    def dead_replanner(stage, subtask, state, constraints):
        # Always emits a tree that fails instantly, so the stage can never
        # make progress after its first replan.
        never = Atom.of("is_inserted_to", "gear1", "base")
        return bt.BehaviorTree(bt.condition("dead", never))

    cfg = ExecutionConfig(max_replans_per_stage=2, max_ticks=400)
    scenario = fixtures.gearset_scenario(3, "III", seed=0)
    ex = Executor(plans[3], _env(domain), cfg, dead_replanner, domain, scenario)
    trace, metrics = ex.run()
    assert not metrics.ts
    end = trace[-1]
    assert end["type"] == "run_end" and not end["ts"]
    assert "replan bound" in end["reason"]
    assert metrics.replans == cfg.max_replans_per_stage


def test_max_ticks_bound(plans, domain, rule_backend):
    cfg = ExecutionConfig(max_ticks=10)
    env = _env(domain)
    trace, metrics = Executor(plans[5], env, cfg,
                              planner.make_replanner(rule_backend, domain),
                              domain, fixtures.gearset_scenario(5, "none")).run()
    assert not metrics.ts and metrics.ticks == 10
    assert trace[-1]["reason"] == "max ticks exhausted"


# --- metrics ---

def test_metrics_require_ground_truth_agreement(plans, domain, rule_backend):
    trace, metrics = _run(domain, rule_backend, plans[1], task_length=1)
    assert metrics.ts
    recomputed = compute_metrics(trace, plans[1], [])
    assert recomputed.ts == metrics.ts
    assert recomputed.cr == metrics.cr
    assert recomputed.replans == metrics.replans


def test_compute_metrics_replays_disturbed_trace(plans, domain, rule_backend):
    for kind in ("I", "II", "III"):
        trace, metrics = _run(domain, rule_backend, plans[5], kind=kind)
        replayed = compute_metrics(trace, plans[5], [])
        assert replayed.ts == metrics.ts
        assert replayed.drr == metrics.drr == 1.0
        assert replayed.cr == metrics.cr


def test_partial_failure_yields_fractional_cr(plans, domain, rule_backend):
    cfg = ExecutionConfig(max_ticks=60)  # enough for roughly two stages
    env = _env(domain)
    _, metrics = Executor(plans[5], env, cfg,
                          planner.make_replanner(rule_backend, domain),
                          domain, fixtures.gearset_scenario(5, "none")).run()
    assert not metrics.ts
    assert 0.0 < metrics.cr < 1.0


# --- benchmark harness ---

def test_trial_seed_is_stable_and_distinct():
    assert trial_seed(7, 0, 0) == trial_seed(7, 0, 0)
    cells = {trial_seed(7, c, t) for c in range(3) for t in range(3)}
    assert len(cells) == 9


def test_bench_matrix_shape_and_determinism(plans, domain, rule_backend):
    matrix = [(1, "none"), (1, "III"), (3, "I")]

    def scenario_builder(n, kind, seed):
        return fixtures.gearset_scenario(n, kind, seed=seed)

    def env_builder(scenario):
        return WorkcellEnv(fixtures.gearset_workcell(), domain,
                           seed=int(scenario["seed"]),
                           noise=NoiseModel.from_doc(scenario["perception_noise"]))

    def sweep():
        return bench(plans, scenario_builder, env_builder, matrix, 3,
                     ExecutionConfig(seed=13),
                     planner.make_replanner(rule_backend, domain), domain)

    results = sweep()
    assert results.columns == BENCH_COLUMNS
    assert len(results.rows) == len(matrix) * 3
    assert [r["task_length"] for r in results.summary] == [1, 1, 3]
    assert all(r["mean_TS"] == 1.0 for r in results.summary)
    assert results.to_doc() == sweep().to_doc()
    header = results.to_table().splitlines()[0]
    assert header == "\t".join(BENCH_COLUMNS)
