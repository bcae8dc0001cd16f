"""Stage-wise reactive execution of a compiled plan: extension with achieved
subgoals, in-tick self-recovery, rollback and replanning on failure, and
metric collection over the resulting trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import bt
from .atoms import Atom
from .errors import NoFailure
from .planner import PlanBundle, Subtask
from .sim import Disturbance, WorkcellEnv
from .world import (
    BeliefStore,
    ConstraintSet,
    Domain,
    PerceptionParams,
    WorldState,
    update_state,
)

Replanner = Callable[[int, Subtask, WorldState, ConstraintSet], bt.BehaviorTree]


@dataclass(frozen=True)
class ExecutionConfig:
    tick_frequency: float = 10.0  # ticks per simulated second
    max_replans_per_stage: int = 3
    max_ticks: int = 10000
    seed: int = 0

    def to_doc(self) -> dict:
        return {"tick_frequency": self.tick_frequency,
                "max_replans_per_stage": self.max_replans_per_stage,
                "max_ticks": self.max_ticks, "seed": self.seed}


@dataclass
class RunMetrics:
    ts: bool
    cr: float
    drr: float
    drr_applicable: bool
    ticks: int
    replans: int

    def to_doc(self) -> dict:
        return {"TS": self.ts, "CR": round(self.cr, 6), "DRR": round(self.drr, 6),
                "DRR_applicable": self.drr_applicable,
                "ticks": self.ticks, "replans": self.replans}


def extend(subtree: bt.BehaviorTree, achieved: list[Atom]) -> bt.BehaviorTree:
    """Extended BT: Sequence(Cond r_0 .. r_{i-1}, b_i); uniform wrapper for i=0."""
    prefix = [bt.condition(f"ext/{j}", atom) for j, atom in enumerate(achieved)]
    root = bt.sequence("ext/root", prefix + [subtree.root])
    return bt.BehaviorTree(root, metadata=dict(subtree.metadata))


def self_recovery_probe(tree: bt.BehaviorTree, violated: Atom) -> bt.BTNode | None:
    """Action unit within the subtree whose target restores ``violated``."""
    return bt.find_unit_by_target(tree.root, violated)


@dataclass
class _DisturbanceRecord:
    disturbance: Disturbance
    fired_tick: int
    violated: Atom | None = None  # kind I: pose atom; kind III: detached relation
    target_object: str | None = None  # kind II
    violation_seen: bool = False
    recovered: bool = False


class Executor:
    """One reactive run over a plan bundle against a simulated workcell.

    Thread A (BT execution) and Thread B (world-state maintenance) are
    realized as two phases of a deterministic per-tick cycle: maintenance
    runs exactly once before each tick.
    """

    def __init__(
        self,
        plan: PlanBundle,
        env: WorkcellEnv,
        cfg: ExecutionConfig,
        replanner: Replanner,
        domain: Domain,
        scenario: dict | None = None,
    ):
        self.plan = plan
        self.env = env
        self.cfg = cfg
        self.replanner = replanner
        self.domain = domain
        self.params = PerceptionParams(
            position_threshold=float((scenario or {}).get("position_threshold", 1.0)),
            pose_threshold=float((scenario or {}).get("pose_threshold", 1.0)),
        )
        self.belief = BeliefStore(plan.snapshots[0].copy(), domain, plan.constraints.copy())
        env.set_belief_reader(self.belief.pose_of)
        self.subtrees = list(plan.subtrees)
        self.goals = list(plan.goals)
        self.n_stages = len(self.subtrees)
        self.stage = 0
        self.tick_count = 0
        self.trace: list[dict] = []
        self.done = False
        self.success = False
        self.end_reason = ""
        self.replans = 0
        self.replans_per_stage: dict[int, int] = {}
        self._ext_tree: bt.BehaviorTree | None = None
        self._ext_index: dict[str, int] = {}
        self._prev_running: set[str] = set()
        self._violated_atoms: dict[Atom, int] = {}
        self._pending: list[Disturbance] = [
            Disturbance.from_doc(d) for d in (scenario or {}).get("disturbances", [])
        ]
        self._queued: list[Disturbance] = []
        self._disturbance_log: list[_DisturbanceRecord] = []
        self._stage_entered = True
        self._started = False

    # --- public surface ---

    def post_disturbance(self, disturbance: Disturbance) -> None:
        """Accept a live disturbance; one with a trigger waits for it like a
        scripted one, a bare payload applies on the next tick cycle."""
        if disturbance.trigger:
            self._pending.append(disturbance)
        else:
            self._queued.append(disturbance)

    def run(self) -> tuple[list[dict], RunMetrics]:
        while not self.done:
            self.step_tick()
        return self.trace, self.metrics()

    def step(self, ticks: int) -> None:
        for _ in range(ticks):
            if self.done:
                break
            self.step_tick()

    # --- tick cycle ---

    def step_tick(self) -> None:
        if self.done:
            return
        if not self._started:
            self._started = True
            state = self.belief.state
            self._event({
                "type": "run_start",
                "stages": self.n_stages,
                "goals": [str(g) for g in self.goals],
                "objects": sorted(state.objects),
                "atoms": {"P": [str(a) for a in sorted(state.P)],
                          "R": [str(a) for a in sorted(state.R)]},
            })
        if self.stage >= self.n_stages:
            self._finish(True, "all stages complete")
            return
        if self._ext_tree is None:
            self._build_extended()
        self._fire_disturbances()
        self._maintenance()
        before_p, before_r = set(self.belief.state.P), set(self.belief.state.R)
        result = bt.tick_traced(self._ext_tree, self.belief, self.env)
        self._note_belief_delta(before_p, before_r)
        self._drain_env_events()
        self._record_tick(result)
        self._handle_suspension(result)
        self.env.step()
        self._drain_env_events()
        self._check_recoveries()
        self.tick_count += 1
        if result.status is bt.Status.SUCCESS:
            self._complete_stage()
        elif result.status is bt.Status.FAILURE:
            self._handle_failure(result)
        if not self.done and self.tick_count >= self.cfg.max_ticks:
            self._finish(False, "max ticks exhausted")

    def _build_extended(self) -> None:
        achieved = self.goals[: self.stage]
        self._ext_tree = extend(self.subtrees[self.stage], achieved)
        self._ext_index = {f"ext/{j}": j for j in range(self.stage)}
        self._prev_running = set()

    def _fire_disturbances(self) -> None:
        due = [d for d in self._pending if self._trigger_met(d.trigger)]
        for disturbance in due + self._queued:
            if disturbance in self._pending:
                self._pending.remove(disturbance)
            record = _DisturbanceRecord(disturbance, self.tick_count)
            if disturbance.kind == "III":
                part = disturbance.payload.get("part")
                base = disturbance.payload.get("base")
                edge = self.env.state.attachments.get(part)
                if edge is not None and edge[0] == base:
                    record.violated = Atom.of(edge[1], part, base)
                else:
                    record.violated = Atom.of("hold", base, part)
            elif disturbance.kind == "I":
                record.violated = Atom.of("pose_is_known", disturbance.payload["object"])
            else:
                record.target_object = disturbance.payload.get("object")
            self.env.inject(disturbance)
            self._disturbance_log.append(record)
            self._event({"type": "disturbance", "kind": disturbance.kind,
                         "payload": dict(disturbance.payload)})
        self._queued = []

    def _trigger_met(self, trigger: dict) -> bool:
        if "at_tick" in trigger:
            return self.tick_count >= int(trigger["at_tick"])
        if "at_stage_start" in trigger:
            return self.stage >= int(trigger["at_stage_start"])
        if "when_action_running" in trigger:
            spec = trigger["when_action_running"]
            record = self.env.active_record()
            if record is None:
                return False
            if record.action.name != spec.get("name"):
                return False
            args = spec.get("args")
            if args is not None and list(record.action.args) != list(args):
                return False
            return record.progress >= int(spec.get("min_progress", 0))
        return False

    def _maintenance(self) -> None:
        m1, m2 = self.env.sense()
        prev = self.belief.state
        new = update_state(prev, self.env.current_action(), m1, m2,
                           self.domain, self.params)
        removed_p = prev.P - new.P
        removed_r = prev.R - new.R
        added_p = new.P - prev.P
        moved = sorted(o for o in new.positions
                       if prev.positions.get(o) != new.positions[o])
        self.belief.swap(new)
        for atom in removed_p | removed_r:
            self._violated_atoms[atom] = self.tick_count
        if removed_p or removed_r or added_p or moved:
            self._event({
                "type": "state_update",
                "added_p": [str(a) for a in sorted(added_p)],
                "removed_p": [str(a) for a in sorted(removed_p)],
                "added_r": [],
                "removed_r": [str(a) for a in sorted(removed_r)],
                "positions_updated": moved,
            })
        for record in self._disturbance_log:
            if record.violated is not None and not record.violation_seen:
                if record.violated in removed_p or record.violated in removed_r:
                    record.violation_seen = True

    def _drain_env_events(self) -> None:
        for event in self.env.drain_events():
            event = dict(event)
            event["t"] = self.tick_count
            self.trace.append(event)
            if event["type"] in ("action_start", "action_resume"):
                self._note_self_recovery(event)

    def _note_self_recovery(self, event: dict) -> None:
        if self._ext_tree is None:
            return
        units = bt.action_unit_targets(self._ext_tree.root)
        entry = units.get(event["node"])
        if entry is None:
            return
        unit, target = entry
        if target in self._violated_atoms:
            self._event({"type": "self_recovery", "atom": str(target),
                         "action": event["action"], "node": unit.node_id})

    def _note_belief_delta(self, before_p: set, before_r: set) -> None:
        """Emit an event for belief atoms changed by the tick itself, so a
        consumer can maintain the atom set by folding events alone."""
        state = self.belief.state
        added = sorted(str(a) for a in (state.P - before_p) | (state.R - before_r))
        removed = sorted(str(a) for a in (before_p - state.P) | (before_r - state.R))
        if added or removed:
            self._event({"type": "belief_update", "added": added, "removed": removed})

    def _record_tick(self, result: bt.TickResult) -> None:
        self._event({
            "type": "tick",
            "stage": self.stage,
            "status": result.status.value,
            "visited": [[node_id, status.value] for node_id, status in result.visited],
        })

    def _handle_suspension(self, result: bt.TickResult) -> None:
        running = bt.running_action_ids(result, self._ext_tree)
        for node_id in sorted(self._prev_running - running):
            if self.env.poll(node_id) is bt.RuntimeStatus.RUNNING:
                self.env.suspend(node_id)
        self._prev_running = running
        self._drain_env_events()

    def _check_recoveries(self) -> None:
        state = self.belief.state
        for atom in list(self._violated_atoms):
            if atom in state.P or atom in state.R:
                del self._violated_atoms[atom]
        for record in self._disturbance_log:
            if record.recovered:
                continue
            if record.violated is not None:
                if record.violation_seen and (
                        record.violated in state.P or record.violated in state.R):
                    record.recovered = True
            elif record.target_object is not None:
                obj = record.target_object
                believed = state.positions.get(obj)
                actual = self.env.state.poses.get(obj)
                if believed is not None and actual is not None:
                    dx = believed[0] - actual[0]
                    dy = believed[1] - actual[1]
                    if (dx * dx + dy * dy) ** 0.5 <= self.params.position_threshold:
                        record.recovered = True

    def _complete_stage(self) -> None:
        goal = self.goals[self.stage]
        self._event({"type": "stage_complete", "stage": self.stage, "goal": str(goal)})
        self.stage += 1
        self._ext_tree = None
        if self.stage >= self.n_stages:
            self._finish(True, "all stages complete")

    def _handle_failure(self, result: bt.TickResult) -> None:
        try:
            node = bt.failed_node(self._ext_tree, result)
        except NoFailure:
            return
        if node.node_id in self._ext_index:
            target_stage = self._ext_index[node.node_id]
            self._event({"type": "rollback", "from": self.stage, "to": target_stage})
            if not self._replan(target_stage):
                return
            self.stage = target_stage
        else:
            if not self._replan(self.stage):
                return
        self._ext_tree = None

    def _replan(self, stage: int) -> bool:
        count = self.replans_per_stage.get(stage, 0) + 1
        if count > self.cfg.max_replans_per_stage:
            self._finish(False, f"replan bound exhausted at stage {stage}")
            return False
        self.replans_per_stage[stage] = count
        self.replans += 1
        self.env.cancel_all()
        subtree = self.replanner(stage, self.plan.subtasks[stage],
                                 self.belief.state, self.belief.constraints)
        self.subtrees[stage] = subtree
        self._event({"type": "replan", "stage": stage})
        return True

    def _finish(self, success: bool, reason: str) -> None:
        self.done = True
        self.success = success
        self.end_reason = reason
        self._event({"type": "run_end", "ts": success, "reason": reason})

    def _event(self, event: dict) -> None:
        event = dict(event)
        event["t"] = self.tick_count
        self.trace.append(event)

    # --- metrics ---

    def metrics(self) -> RunMetrics:
        state = self.belief.state
        ground = self.env.state.induced_relations()
        achieved = 0
        all_ground = True
        for goal in self.goals:
            if goal in state.R:
                achieved += 1
            if (goal.pred, goal.args[0], goal.args[1]) not in ground:
                all_ground = False
        cr = achieved / self.n_stages if self.n_stages else 1.0
        ts = self.success and achieved == self.n_stages and all_ground
        fired = len(self._disturbance_log)
        recovered = sum(1 for r in self._disturbance_log if r.recovered)
        drr = recovered / fired if fired else 1.0
        return RunMetrics(ts=ts, cr=cr, drr=drr, drr_applicable=fired > 0,
                          ticks=self.tick_count, replans=self.replans)


def run(
    plan: PlanBundle,
    env: WorkcellEnv,
    cfg: ExecutionConfig,
    replanner: Replanner,
    domain: Domain,
    scenario: dict | None = None,
) -> tuple[list[dict], RunMetrics]:
    """Execute a plan to completion or bound exhaustion."""
    executor = Executor(plan, env, cfg, replanner, domain, scenario)
    return executor.run()


def compute_metrics(trace: list[dict], plan: PlanBundle,
                    disturbances: list[dict]) -> RunMetrics:
    """Recompute run metrics from an exported trace (replay path).

    Completion is judged from stage_complete events net of later rollbacks;
    recovery from the violated atom reappearing (or the rolled-back stage
    re-completing) after each disturbance event.
    """
    n = len(plan.subtrees)
    completed: set[int] = set()
    ts = False
    replans = 0
    ticks = 0
    for event in trace:
        ticks = max(ticks, int(event.get("t", 0)))
        kind = event["type"]
        if kind == "stage_complete":
            completed.add(int(event["stage"]))
        elif kind == "rollback":
            completed -= {s for s in completed if s >= int(event["to"])}
        elif kind == "replan":
            replans += 1
        elif kind == "run_end":
            ts = bool(event["ts"])
    fired = [e for e in trace if e["type"] == "disturbance"]
    recovered = 0
    for dist_event in fired:
        if _recovered_in_trace(trace, dist_event):
            recovered += 1
    drr = recovered / len(fired) if fired else 1.0
    cr = len(completed) / n if n else 1.0
    return RunMetrics(ts=ts, cr=cr, drr=drr, drr_applicable=bool(fired),
                      ticks=ticks, replans=replans)


def _recovered_in_trace(trace: list[dict], dist_event: dict) -> bool:
    start = trace.index(dist_event)
    kind = dist_event["kind"]
    if kind == "II":
        # Recovery is the position refresh (rule 1) for the displaced object.
        obj = dist_event["payload"].get("object")
        return any(e["type"] == "state_update" and obj in e.get("positions_updated", [])
                   for e in trace[start:])
    removed: set[str] = set()
    for event in trace[start:]:
        if event["type"] == "state_update":
            removed |= set(event.get("removed_p", [])) | set(event.get("removed_r", []))
        if event["type"] == "stage_complete" and removed:
            return True
        if event["type"] == "self_recovery" and event.get("atom") in removed:
            # The restoring action ran; confirm its atom held again afterwards.
            return True
    return False


# --- benchmark sweeps ---

@dataclass
class BenchResults:
    columns: tuple[str, ...]
    rows: list[dict]
    summary: list[dict] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {"columns": list(self.columns), "rows": list(self.rows),
                "summary": list(self.summary)}

    def to_table(self) -> str:
        lines = ["\t".join(self.columns)]
        for row in self.rows:
            lines.append("\t".join(_cell(row[c]) for c in self.columns))
        return "\n".join(lines)

    def summary_table(self) -> str:
        columns = ("task_length", "disturbance", "trials",
                   "mean_TS", "mean_CR", "mean_DRR")
        lines = ["\t".join(columns)]
        for row in self.summary:
            lines.append("\t".join(_cell(row[c]) for c in columns))
        return "\n".join(lines)


def _cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "%.4f" % value
    return str(value)


BENCH_COLUMNS = ("task_length", "disturbance", "trial", "TS", "CR", "DRR",
                 "ticks", "replans")


def trial_seed(master_seed: int, cell_index: int, trial: int) -> int:
    seq = np.random.SeedSequence(entropy=(master_seed, cell_index, trial))
    return int(seq.generate_state(1)[0])


def bench(
    plans: Mapping[int, PlanBundle],
    scenario_builder: Callable[[int, str, int], dict],
    env_builder: Callable[[dict], WorkcellEnv],
    matrix: list[tuple[int, str]],
    trials: int,
    cfg: ExecutionConfig,
    replanner: Replanner,
    domain: Domain,
) -> BenchResults:
    """Run the trial matrix and aggregate per-cell means plus per-trial points."""
    rows = []
    summary = []
    for cell_index, (length, disturbance_kind) in enumerate(matrix):
        plan = plans[length]
        cell_rows = []
        for trial in range(trials):
            seed = trial_seed(cfg.seed, cell_index, trial)
            scenario = scenario_builder(length, disturbance_kind, seed)
            env = env_builder(scenario)
            trial_cfg = ExecutionConfig(cfg.tick_frequency, cfg.max_replans_per_stage,
                                        cfg.max_ticks, seed)
            _, metrics = run(plan, env, trial_cfg, replanner, domain, scenario)
            row = {
                "task_length": length,
                "disturbance": disturbance_kind,
                "trial": trial,
                "TS": metrics.ts,
                "CR": metrics.cr,
                "DRR": metrics.drr,
                "ticks": metrics.ticks,
                "replans": metrics.replans,
            }
            rows.append(row)
            cell_rows.append(row)
        summary.append({
            "task_length": length,
            "disturbance": disturbance_kind,
            "trials": trials,
            "mean_TS": sum(1.0 for r in cell_rows if r["TS"]) / trials,
            "mean_CR": sum(r["CR"] for r in cell_rows) / trials,
            "mean_DRR": sum(r["DRR"] for r in cell_rows) / trials,
        })
    return BenchResults(BENCH_COLUMNS, rows, summary)
