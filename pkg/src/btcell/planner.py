"""Two-stage plan generation: demonstration interpretation, per-subtask action
sequencing and subtree synthesis, review gates, and the generation metrics.

Backends produce structured replies only; a deterministic rule-based backend
provides offline planning and also serves as the replan provider during
execution.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import bt
from .atoms import ActionInstance, Atom
from .errors import (
    IncoherentSequence,
    MaxRoundsExceeded,
    ParseFailure,
    PlanningStageError,
    SchemaViolation,
    UngroundedSymbol,
    VirtualFailure,
)
from .world import (
    HOLD,
    POSE_IS_KNOWN,
    ConstraintSet,
    Domain,
    WorldState,
    apply_effects,
    default_domain,
    init_state,
    virtual_tick,
)

DEFAULT_MAX_ROUNDS = 5

SKILL_CONSTRAINTS = {
    "insert": "can_insert_to",
    "engage": "can_engage_with",
    "place": "can_place_on",
}


# --- domain types ---

@dataclass(frozen=True)
class DemonstrationTranscript:
    keyframes: tuple[dict, ...]
    narration_text: str
    narration_language: str
    objects: tuple[str, ...]

    @classmethod
    def from_doc(cls, doc: dict) -> "DemonstrationTranscript":
        keyframes = doc.get("keyframes") or []
        objects = doc.get("objects") or []
        narration = doc.get("narration") or {}
        if not keyframes:
            raise ParseFailure("transcript requires at least one keyframe")
        if not objects:
            raise ParseFailure("transcript requires a non-empty object vocabulary")
        return cls(
            keyframes=tuple(dict(k) for k in keyframes),
            narration_text=str(narration.get("text", "")),
            narration_language=str(narration.get("language", "en")),
            objects=tuple(str(o) for o in objects),
        )

    def to_doc(self) -> dict:
        return {
            "keyframes": [dict(k) for k in self.keyframes],
            "narration": {"text": self.narration_text, "language": self.narration_language},
            "objects": list(self.objects),
        }


@dataclass(frozen=True)
class Subtask:
    skill: str
    part: str
    target: str

    def goal_relation(self, domain: Domain) -> Atom:
        _, rel = domain.skill_goals[self.skill]
        return Atom.of(rel, self.part, self.target)

    def constraint(self) -> Atom:
        return Atom.of(SKILL_CONSTRAINTS[self.skill], self.part, self.target)

    def to_doc(self) -> dict:
        return {"skill": self.skill, "part": self.part, "target": self.target}

    @classmethod
    def from_doc(cls, doc: dict) -> "Subtask":
        return cls(str(doc["skill"]), str(doc["part"]), str(doc["target"]))


@dataclass
class ReviewDecision:
    stage: str
    verdict: str  # "approve" | "feedback"
    feedback: str = ""
    round_index: int = 0

    @classmethod
    def approve(cls, stage: str, round_index: int = 0) -> "ReviewDecision":
        return cls(stage, "approve", "", round_index)


@dataclass
class PlanBundle:
    subtasks: list[Subtask]
    constraints: ConstraintSet
    subtrees: list[bt.BehaviorTree]
    goals: list[Atom]
    snapshots: list[WorldState]
    review_log: list[dict] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "subtasks": [t.to_doc() for t in self.subtasks],
            "constraints": [a.to_doc() for a in sorted(self.constraints.atoms)],
            "subtrees": [bt.serialize(t) for t in self.subtrees],
            "goals": [g.to_doc() for g in self.goals],
            "snapshots": [s.atoms_doc() for s in self.snapshots],
            "review_log": list(self.review_log),
        }


# --- backend contract ---

class PlannerBackend:
    """Structured-reply interface standing in for the VLM/LLM agents."""

    def interpret(self, request: dict) -> dict:
        raise NotImplementedError

    def refine(self, request: dict, prior_reply: dict, feedback: str) -> dict:
        raise NotImplementedError


# --- deterministic fallback planning ---

_VERB_PATTERNS = [
    ("insert", re.compile(r"insert the (\w+) (?:into|onto) the (\w+)", re.IGNORECASE)),
    ("place", re.compile(r"place the (\w+) on(?:to)? the (\w+)", re.IGNORECASE)),
    ("engage", re.compile(r"engage the (\w+) with the (\w+)", re.IGNORECASE)),
]


def parse_narration(text: str) -> list[Subtask]:
    """Extract ordered subtasks from imperative narration sentences."""
    found: list[tuple[int, Subtask]] = []
    for skill, pattern in _VERB_PATTERNS:
        for match in pattern.finditer(text):
            found.append((match.start(), Subtask(skill, match.group(1), match.group(2))))
    found.sort(key=lambda item: item[0])
    return [subtask for _, subtask in found]


def fallback_action_sequence(
    subtask: Subtask,
    state: WorldState,
    domain: Domain,
    constraints: ConstraintSet,
    tool: str = "gripper",
) -> list[ActionInstance]:
    """Rule-based action sequencing: pose retrieval, grasping, skill action."""
    goal = subtask.goal_relation(domain)
    if goal in state.R:
        return []
    actions: list[ActionInstance] = []
    held = next((a.args[1] for a in state.R if a.pred == HOLD and a.args[0] == tool), None)
    pose_known = {a.args[0] for a in state.P if a.pred == POSE_IS_KNOWN}
    if held is not None and held != subtask.part:
        actions.append(ActionInstance.of("put_down", tool, held))
        held = None
    if held != subtask.part:
        if subtask.part not in pose_known:
            actions.append(ActionInstance.of("retrieve_pose", subtask.part))
        actions.append(ActionInstance.of("pick_up", tool, subtask.part))
    if subtask.target not in pose_known:
        actions.append(ActionInstance.of("retrieve_pose", subtask.target))
    skill_action, _ = domain.skill_goals[subtask.skill]
    actions.append(ActionInstance.of(skill_action, tool, subtask.part, subtask.target))
    return actions


def build_subtree(
    subtask: Subtask,
    actions: list[ActionInstance],
    domain: Domain,
    stage_index: int = 0,
) -> bt.BehaviorTree:
    """Compose action units under the canonical Selector(goal, Sequence(units)) root."""
    goal = subtask.goal_relation(domain)
    prefix = f"b{stage_index}"
    units = []
    for k, action in enumerate(actions):
        schema = domain.schema(action.name)
        adds = schema.ground_adds(action)
        target = adds[0] if adds else goal
        units.append(bt.make_action_unit(
            target,
            schema.ground_preconditions(action),
            action,
            node_id=f"{prefix}/u{k}",
            declared_effects=set(adds) or {goal},
        ))
    if units:
        body: bt.BTNode | None = units[0] if len(units) == 1 else bt.sequence(f"{prefix}/seq", units)
        root = bt.selector(f"{prefix}/root", [bt.condition(f"{prefix}/goal", goal), body])
    else:
        root = bt.condition(f"{prefix}/goal", goal)
    return bt.BehaviorTree(root, metadata={
        "subtask": subtask.to_doc(),
        "stage": stage_index,
        "provenance": "generated",
    })


class RuleBackend(PlannerBackend):
    """Deterministic rule-based backend: parses structured transcripts and
    plans with the fallback rules.  Refinement simply recomputes."""

    def __init__(self, domain: Domain | None = None, tool: str = "gripper"):
        self.domain = domain or default_domain()
        self.tool = tool

    def interpret(self, request: dict) -> dict:
        kind = request.get("kind")
        if kind == "interpret":
            transcript = DemonstrationTranscript.from_doc(request["transcript"])
            subtasks = parse_narration(transcript.narration_text)
            return {
                "subtasks": [t.to_doc() for t in subtasks],
                "constraints": [t.constraint().to_doc() for t in subtasks],
            }
        if kind == "plan_actions":
            subtask = Subtask.from_doc(request["subtask"])
            state = _state_from_request(request)
            constraints = _constraints_from_request(request)
            actions = fallback_action_sequence(subtask, state, self.domain, constraints, self.tool)
            return {"actions": [a.to_doc() for a in actions]}
        if kind == "synthesize":
            subtask = Subtask.from_doc(request["subtask"])
            actions = [ActionInstance.from_doc(a) for a in request["actions"]]
            tree = build_subtree(subtask, actions, self.domain, int(request.get("stage", 0)))
            return {"tree": bt.serialize(tree)}
        raise ParseFailure(f"unknown request kind {kind!r}")

    def refine(self, request: dict, prior_reply: dict, feedback: str) -> dict:
        return self.interpret(request)


def _state_from_request(request: dict) -> WorldState:
    doc = request["state"]
    objects = frozenset(str(o) for o in request.get("objects", []))
    return WorldState(
        objects=objects,
        P={Atom.from_doc(a) for a in doc["P"]},
        R={Atom.from_doc(a) for a in doc["R"]},
    )


def _constraints_from_request(request: dict) -> ConstraintSet:
    return ConstraintSet({Atom.from_doc(a) for a in request.get("constraints", [])})


def _state_request(state: WorldState, constraints: ConstraintSet) -> dict:
    return {
        "state": state.atoms_doc(),
        "objects": sorted(state.objects),
        "constraints": [a.to_doc() for a in sorted(constraints.atoms)],
    }


class ScriptedBackend(PlannerBackend):
    """Replays a fixed list of replies; refine pops the next scripted reply."""

    def __init__(self, replies: list[dict]):
        self._replies = list(replies)
        self.calls: list[dict] = []

    def _next(self) -> dict:
        if not self._replies:
            raise ParseFailure("scripted backend exhausted")
        return self._replies.pop(0)

    def interpret(self, request: dict) -> dict:
        self.calls.append(request)
        return self._next()

    def refine(self, request: dict, prior_reply: dict, feedback: str) -> dict:
        self.calls.append({"refine": request, "feedback": feedback})
        return self._next()


class FaultyBackend(PlannerBackend):
    """Wraps another backend and corrupts a seeded fraction of initial replies.

    Faults cycle through the three failure categories (wrong subtask target,
    dropped grasp action, malformed tree) so each generation metric is
    exercised.  Refinement always returns the inner backend's reply, making
    scripted feedback corrective by construction.
    """

    def __init__(self, inner: PlannerBackend, fault_rate: float = 0.2, seed: int = 0):
        import random

        self.inner = inner
        self.fault_rate = fault_rate
        self._rng = random.Random(seed)
        self._fault_cycle = 0

    def interpret(self, request: dict) -> dict:
        reply = self.inner.interpret(request)
        if self._rng.random() >= self.fault_rate:
            return reply
        kind = request.get("kind")
        fault = self._fault_cycle % 3
        self._fault_cycle += 1
        if kind == "interpret" and reply.get("subtasks"):
            bad = dict(reply["subtasks"][0])
            objects = list(request["transcript"].get("objects", []))
            others = [o for o in objects if o not in (bad["part"], bad["target"])]
            if others:
                bad["target"] = others[0]
            corrupted = dict(reply)
            corrupted["subtasks"] = [bad] + [dict(t) for t in reply["subtasks"][1:]]
            return corrupted
        if kind == "plan_actions" and fault != 2:
            actions = [a for a in reply["actions"] if a["name"] != "pick_up"]
            return {"actions": actions}
        if kind == "synthesize":
            return {"tree": {"root": {"kind": "sequence", "id": "bad", "children": []}}}
        return reply

    def refine(self, request: dict, prior_reply: dict, feedback: str) -> dict:
        return self.inner.refine(request, prior_reply, feedback)


# --- review gates ---

class ReviewGate:
    def review(self, stage: str, payload: dict, diagnostics: list[str]) -> ReviewDecision:
        raise NotImplementedError


class AutoApproveGate(ReviewGate):
    def review(self, stage: str, payload: dict, diagnostics: list[str]) -> ReviewDecision:
        return ReviewDecision.approve(stage)


class ScriptedFeedbackGate(ReviewGate):
    """Issues corrective feedback whenever an artifact deviates from gold."""

    def __init__(self, gold_subtasks: list[Subtask] | None = None):
        self.gold_subtasks = gold_subtasks

    def review(self, stage: str, payload: dict, diagnostics: list[str]) -> ReviewDecision:
        if diagnostics:
            return ReviewDecision(stage, "feedback", "; ".join(diagnostics))
        if stage == "interpretation" and self.gold_subtasks is not None:
            predicted = [Subtask.from_doc(t) for t in payload.get("subtasks", [])]
            feedback = corrective_feedback(predicted, self.gold_subtasks)
            if feedback:
                return ReviewDecision(stage, "feedback", feedback)
        return ReviewDecision.approve(stage)


def corrective_feedback(predicted: list[Subtask], gold: list[Subtask]) -> str:
    """Human-style correction text comparing predicted subtasks to gold."""
    notes = []
    for i, expected in enumerate(gold):
        got = predicted[i] if i < len(predicted) else None
        if got != expected:
            notes.append(f"subtask {i + 1} should be {expected.skill}({expected.part}, {expected.target})")
    if len(predicted) > len(gold):
        notes.append(f"only {len(gold)} subtasks were demonstrated")
    return "; ".join(notes)


# --- pipeline operations ---

def interpret_demo(
    transcript: DemonstrationTranscript,
    objects: tuple[str, ...],
    domain: Domain,
    backend: PlannerBackend,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> tuple[list[Subtask], set[Atom], dict]:
    """Stage A: infer subtasks and inter-object constraints from the transcript.

    Replies failing grounding checks trigger backend refine rounds; returns
    the parsed subtasks, constraint atoms, and the accepted raw reply.
    """
    request = {"kind": "interpret", "transcript": transcript.to_doc()}
    reply = backend.interpret(request)
    last_error: Exception | None = None
    for _ in range(max_rounds + 1):
        try:
            subtasks, constraints = parse_interpretation(reply, objects, domain)
            return subtasks, constraints, reply
        except (ParseFailure, UngroundedSymbol) as exc:
            last_error = exc
            reply = backend.refine(request, reply, str(exc))
    raise MaxRoundsExceeded(f"interpretation never converged: {last_error}")


def parse_interpretation(reply: dict, objects: tuple[str, ...], domain: Domain) -> tuple[list[Subtask], set[Atom]]:
    if not isinstance(reply, dict) or "subtasks" not in reply:
        raise ParseFailure("interpretation reply must contain 'subtasks'")
    object_set = set(objects)
    subtasks: list[Subtask] = []
    for doc in reply["subtasks"]:
        try:
            subtask = Subtask.from_doc(doc)
        except (KeyError, TypeError) as exc:
            raise ParseFailure(f"malformed subtask entry {doc!r}") from exc
        if subtask.skill not in domain.skills:
            raise UngroundedSymbol(f"unknown skill {subtask.skill!r}")
        for obj in (subtask.part, subtask.target):
            if obj not in object_set:
                raise UngroundedSymbol(f"unknown object {obj!r} in subtask {subtask.to_doc()}")
        subtasks.append(subtask)
    constraints: set[Atom] = set()
    for doc in reply.get("constraints", []):
        atom = Atom.from_doc(doc)
        if domain.check_atom_symbol(atom) != "constraint":
            raise UngroundedSymbol(f"{atom} is not a constraint atom")
        for obj in atom.args:
            if obj not in object_set:
                raise UngroundedSymbol(f"unknown object {obj!r} in constraint {atom}")
        constraints.add(atom)
    # Every subtask needs its matching constraint.
    for subtask in subtasks:
        constraints.add(subtask.constraint())
    return subtasks, constraints


def check_action_sequence(
    actions: list[ActionInstance],
    subtask: Subtask,
    state: WorldState,
    domain: Domain,
    constraints: ConstraintSet,
) -> WorldState:
    """Verify precondition chaining from ``state``; returns the final state."""
    current = state
    scratch = constraints.copy()
    for step, action in enumerate(actions):
        try:
            current = apply_effects(current, action, domain, scratch)
        except Exception as exc:
            atom = getattr(exc, "atom", None)
            raise IncoherentSequence(step, atom) from exc
    goal = subtask.goal_relation(domain)
    if goal not in current.R:
        raise IncoherentSequence(len(actions), goal)
    return current


def plan_action_sequence(
    subtask: Subtask,
    state: WorldState,
    domain: Domain,
    constraints: ConstraintSet,
    backend: PlannerBackend,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> list[ActionInstance]:
    goal = subtask.goal_relation(domain)
    if goal in state.R:
        return []
    request = {
        "kind": "plan_actions",
        "subtask": subtask.to_doc(),
        **_state_request(state, constraints),
    }
    reply = backend.interpret(request)
    last_error: Exception | None = None
    for _ in range(max_rounds + 1):
        try:
            actions = parse_action_reply(reply, domain)
            check_action_sequence(actions, subtask, state, domain, constraints)
            return actions
        except (ParseFailure, IncoherentSequence) as exc:
            last_error = exc
            reply = backend.refine(request, reply, str(exc))
    raise MaxRoundsExceeded(f"action sequencing never converged: {last_error}")


def parse_action_reply(reply: dict, domain: Domain) -> list[ActionInstance]:
    if not isinstance(reply, dict) or "actions" not in reply:
        raise ParseFailure("plan reply must contain 'actions'")
    actions = []
    for doc in reply["actions"]:
        try:
            action = ActionInstance.from_doc(doc)
        except (KeyError, TypeError) as exc:
            raise ParseFailure(f"malformed action entry {doc!r}") from exc
        schema = domain.schema(action.name)
        if len(action.args) != len(schema.roles):
            raise ParseFailure(f"arity mismatch for {action}")
        actions.append(action)
    return actions


def synthesize_subtree(
    subtask: Subtask,
    actions: list[ActionInstance],
    domain: Domain,
    constraints: ConstraintSet,
    state: WorldState,
    backend: PlannerBackend,
    stage_index: int = 0,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> bt.BehaviorTree:
    request = {
        "kind": "synthesize",
        "subtask": subtask.to_doc(),
        "actions": [a.to_doc() for a in actions],
        "stage": stage_index,
        **_state_request(state, constraints),
    }
    reply = backend.interpret(request)
    last_error: Exception | None = None
    for _ in range(max_rounds + 1):
        try:
            document = reply.get("tree") if isinstance(reply, dict) else None
            if document is None:
                raise ParseFailure("synthesis reply must contain 'tree'")
            syntactic = validate_syntactic(document, domain)
            if not syntactic.passed:
                raise SchemaViolation(syntactic.violations[0]["message"],
                                      syntactic.violations[0]["path"])
            tree = bt.deserialize(document)
            logical = validate_logical(tree, state, domain, constraints)
            if not logical.passed:
                raise VirtualFailure(logical.violations[0]["path"])
            tree.metadata.setdefault("subtask", subtask.to_doc())
            tree.metadata.setdefault("stage", stage_index)
            return tree
        except (ParseFailure, SchemaViolation, VirtualFailure) as exc:
            last_error = exc
            reply = backend.refine(request, reply, str(exc))
    raise MaxRoundsExceeded(f"subtree synthesis never converged: {last_error}")


# --- validation reports (SVR / LCR) ---

@dataclass
class ValidationReport:
    check: str
    passed: bool
    violations: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {"check": self.check, "passed": self.passed,
                "violations": list(self.violations), "notes": list(self.notes)}


def validate_syntactic(document: dict, domain: Domain | None = None) -> ValidationReport:
    """SVR check: the document obeys the BT grammar and action arities."""
    report = ValidationReport("svr", True)
    try:
        tree = bt.deserialize(document)
    except SchemaViolation as exc:
        report.passed = False
        report.violations.append({"path": exc.path, "message": exc.reason})
        return report
    if domain is not None:
        for node in tree.root.iter_nodes():
            if node.kind == bt.ACTION:
                try:
                    schema = domain.schema(node.action.name)
                    if len(node.action.args) != len(schema.roles):
                        raise SchemaViolation(
                            f"arity mismatch for {node.action}", node.node_id)
                except (SchemaViolation, Exception) as exc:
                    report.passed = False
                    path = getattr(exc, "path", node.node_id)
                    report.violations.append({"path": path, "message": str(exc)})
    return report


def validate_logical(
    tree: bt.BehaviorTree,
    state: WorldState,
    domain: Domain,
    constraints: ConstraintSet,
) -> ValidationReport:
    """LCR check: virtual ticking reaches Success and establishes the goal."""
    report = ValidationReport("lcr", True)
    goal_doc = tree.metadata.get("subtask")
    try:
        result = virtual_tick(tree, state, domain, constraints)
    except VirtualFailure as exc:
        report.passed = False
        report.violations.append({"path": exc.node_id, "message": str(exc)})
        return report
    if goal_doc is not None:
        goal = Subtask.from_doc(goal_doc).goal_relation(domain)
        if goal not in result.R:
            report.passed = False
            report.violations.append({"path": tree.root.node_id,
                                      "message": f"goal {goal} not established"})
            return report
        if goal in state.R:
            report.notes.append("no-op: goal already satisfied")
    return report


# --- full pipeline ---

def generate_plan(
    transcript_doc: dict,
    setup_doc: dict,
    backend: PlannerBackend,
    gate: ReviewGate | None = None,
    domain: Domain | None = None,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> PlanBundle:
    """Run the two-stage pipeline with HITL gates and virtual-tick chaining."""
    domain = domain or default_domain()
    gate = gate or AutoApproveGate()
    transcript = DemonstrationTranscript.from_doc(transcript_doc)
    state0, constraints = init_state(setup_doc, domain)
    review_log: list[dict] = []

    # Stage A: interpretation, gated.
    request = {"kind": "interpret", "transcript": transcript.to_doc()}
    subtasks, extra, reply = interpret_demo(transcript, transcript.objects, domain,
                                            backend, max_rounds)
    for round_index in range(max_rounds + 1):
        decision = gate.review("interpretation",
                               {"subtasks": [t.to_doc() for t in subtasks]}, [])
        review_log.append({"stage": "interpretation", "round": round_index,
                           "verdict": decision.verdict, "feedback": decision.feedback})
        if decision.verdict == "approve":
            break
        reply = backend.refine(request, reply, decision.feedback)
        subtasks, extra = parse_interpretation(reply, transcript.objects, domain)
    else:
        raise MaxRoundsExceeded("interpretation review never approved")
    constraints.atoms |= extra

    # Stage B: per-subtask sequencing, synthesis, gating, and chaining.
    snapshots = [state0]
    subtrees: list[bt.BehaviorTree] = []
    goals: list[Atom] = []
    for i, subtask in enumerate(subtasks):
        try:
            tree = _synthesize_stage(subtask, snapshots[i], domain, constraints,
                                     backend, gate, review_log, i, max_rounds)
        except MaxRoundsExceeded:
            raise
        except Exception as exc:
            raise PlanningStageError(i, exc) from exc
        next_state = virtual_tick(tree, snapshots[i], domain, constraints)
        goal = subtask.goal_relation(domain)
        if goal not in next_state.R:
            raise VirtualFailure(tree.root.node_id, goal)
        subtrees.append(tree)
        goals.append(goal)
        snapshots.append(next_state)
    return PlanBundle(subtasks, constraints, subtrees, goals, snapshots, review_log)


def _synthesize_stage(
    subtask: Subtask,
    state: WorldState,
    domain: Domain,
    constraints: ConstraintSet,
    backend: PlannerBackend,
    gate: ReviewGate,
    review_log: list[dict],
    stage_index: int,
    max_rounds: int,
) -> bt.BehaviorTree:
    actions = plan_action_sequence(subtask, state, domain, constraints, backend, max_rounds)
    tree = synthesize_subtree(subtask, actions, domain, constraints, state,
                              backend, stage_index, max_rounds)
    stage = f"subtree {stage_index}"
    for round_index in range(max_rounds + 1):
        decision = gate.review(stage, {"tree": bt.serialize(tree)}, [])
        review_log.append({"stage": stage, "round": round_index,
                           "verdict": decision.verdict, "feedback": decision.feedback})
        if decision.verdict == "approve":
            return tree
        actions = plan_action_sequence(subtask, state, domain, constraints, backend, max_rounds)
        tree = synthesize_subtree(subtask, actions, domain, constraints, state,
                                  backend, stage_index, max_rounds)
    raise MaxRoundsExceeded(f"{stage} review never approved")


def make_replanner(backend: PlannerBackend | None = None, domain: Domain | None = None):
    """Replan provider for the executor: subtask + current state -> fresh subtree."""
    domain = domain or default_domain()
    backend = backend or RuleBackend(domain)

    def replan(stage_index: int, subtask: Subtask, state: WorldState,
               constraints: ConstraintSet) -> bt.BehaviorTree:
        actions = plan_action_sequence(subtask, state, domain, constraints, backend)
        tree = synthesize_subtree(subtask, actions, domain, constraints, state,
                                  backend, stage_index)
        tree.metadata["provenance"] = "replanned"
        return tree

    return replan


# --- generation metrics ---

def score_decomposition(predicted: list[Subtask], gold: list[Subtask]) -> float:
    """TDA: fraction of positional (skill, part, target) matches."""
    denom = max(len(predicted), len(gold), 1)
    matches = sum(1 for p, g in zip(predicted, gold) if p == g)
    return matches / denom


@dataclass
class GenerationMetrics:
    initial: dict[str, float]
    refined: dict[str, float]
    per_video: list[dict] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {"initial": dict(self.initial), "refined": dict(self.refined),
                "per_video": list(self.per_video)}

    def to_table(self) -> str:
        header = "method\tTDA\tLCR\tSVR"
        rows = [header]
        for name, values in (("initial", self.initial), ("refined", self.refined)):
            rows.append("%s\t%.3f\t%.3f\t%.3f" % (
                name, values["tda"], values["lcr"], values["svr"]))
        return "\n".join(rows)


def evaluate_generation(
    corpus: list[dict],
    backend: PlannerBackend,
    domain: Domain | None = None,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> GenerationMetrics:
    """Score TDA/LCR/SVR at the initial and refined response stages.

    Each corpus entry is {"transcript": ..., "setup": ..., "gold": {"subtasks": [...]}}.
    Subtree generation is evaluated against the gold task sequence, mirroring
    the protocol of scoring structure generation given a correct decomposition.
    """
    domain = domain or default_domain()
    per_video = []
    totals = {"initial": {"tda": [], "lcr": [], "svr": []},
              "refined": {"tda": [], "lcr": [], "svr": []}}
    for entry in corpus:
        transcript = DemonstrationTranscript.from_doc(entry["transcript"])
        gold = [Subtask.from_doc(t) for t in entry["gold"]["subtasks"]]
        state0, constraints = init_state(entry["setup"], domain)
        for subtask in gold:
            constraints.atoms.add(subtask.constraint())
        request = {"kind": "interpret", "transcript": transcript.to_doc()}
        reply = backend.interpret(request)
        try:
            predicted, _ = parse_interpretation(reply, transcript.objects, domain)
        except (ParseFailure, UngroundedSymbol):
            predicted = []
        tda_initial = score_decomposition(predicted, gold)
        if predicted != gold:
            feedback = corrective_feedback(predicted, gold) or "re-examine the demonstration"
            reply = backend.refine(request, reply, feedback)
            try:
                predicted, _ = parse_interpretation(reply, transcript.objects, domain)
            except (ParseFailure, UngroundedSymbol):
                predicted = []
        tda_refined = score_decomposition(predicted, gold)

        svr_i, svr_r, lcr_i, lcr_r = [], [], [], []
        state = state0
        for i, subtask in enumerate(gold):
            outcome = _evaluate_subtree_stage(subtask, state, domain, constraints,
                                              backend, i)
            svr_i.append(outcome["svr_initial"])
            svr_r.append(outcome["svr_refined"])
            lcr_i.append(outcome["lcr_initial"])
            lcr_r.append(outcome["lcr_refined"])
            state = outcome["next_state"]
        video = {
            "initial": {"tda": tda_initial, "lcr": _mean(lcr_i), "svr": _mean(svr_i)},
            "refined": {"tda": tda_refined, "lcr": _mean(lcr_r), "svr": _mean(svr_r)},
        }
        per_video.append(video)
        for stage_name in ("initial", "refined"):
            for metric in ("tda", "lcr", "svr"):
                totals[stage_name][metric].append(video[stage_name][metric])
    return GenerationMetrics(
        initial={m: _mean(v) for m, v in totals["initial"].items()},
        refined={m: _mean(v) for m, v in totals["refined"].items()},
        per_video=per_video,
    )


def _evaluate_subtree_stage(subtask, state, domain, constraints, backend, stage_index):
    plan_request = {"kind": "plan_actions", "subtask": subtask.to_doc(),
                    **_state_request(state, constraints)}

    def attempt(reply_actions, corrective=False):
        try:
            actions = parse_action_reply(reply_actions, domain)
        except ParseFailure as exc:
            return None, None, str(exc)
        synth_request = {"kind": "synthesize", "subtask": subtask.to_doc(),
                         "actions": [a.to_doc() for a in actions],
                         "stage": stage_index, **_state_request(state, constraints)}
        if corrective:
            # The refined pass models one round of corrective feedback on
            # every artifact, so synthesis goes through the refine path too.
            reply_tree = backend.refine(synth_request, {}, "regenerate the tree")
        else:
            reply_tree = backend.interpret(synth_request)
        document = reply_tree.get("tree") if isinstance(reply_tree, dict) else None
        if document is None:
            return None, None, "missing tree"
        syntactic = validate_syntactic(document, domain)
        if not syntactic.passed:
            return False, False, syntactic.violations[0]["message"]
        tree = bt.deserialize(document)
        tree.metadata.setdefault("subtask", subtask.to_doc())
        logical = validate_logical(tree, state, domain, constraints)
        return True, logical.passed, (None if logical.passed else "incoherent")

    reply_actions = backend.interpret(plan_request)
    svr_initial, lcr_initial, problem = attempt(reply_actions)
    svr_initial = bool(svr_initial)
    lcr_initial = bool(lcr_initial)
    if problem is not None:
        reply_actions = backend.refine(plan_request, reply_actions, str(problem))
        svr_refined, lcr_refined, _ = attempt(reply_actions, corrective=True)
        svr_refined = bool(svr_refined)
        lcr_refined = bool(lcr_refined)
    else:
        svr_refined, lcr_refined = svr_initial, lcr_initial
    # Chain the world state with the reference subtree so later stages see a
    # consistent context regardless of backend faults.
    reference = build_subtree(
        subtask,
        fallback_action_sequence(subtask, state, domain, constraints),
        domain,
        stage_index,
    )
    next_state = virtual_tick(reference, state, domain, constraints)
    return {"svr_initial": svr_initial, "svr_refined": svr_refined,
            "lcr_initial": lcr_initial, "lcr_refined": lcr_refined,
            "next_state": next_state}


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0
