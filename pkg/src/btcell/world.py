"""Domain vocabulary, believed world state, action schemas, and update rules.

The believed state is ``omega = (P, R)`` plus the coarse object positions and
fine poses reported by the perception proxies.  Three runtime rules keep the
belief coherent: position invariance, relation validity, and pose consistency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from . import bt
from .atoms import ActionInstance, Atom
from .errors import (
    DomainMismatch,
    DuplicateAtom,
    PreconditionUnsatisfied,
    UnknownObject,
    UnknownSymbol,
    VirtualFailure,
)

Position = tuple[float, float]
Pose = tuple[float, float, float]

IS_EMPTY = "is_empty"
POSE_IS_KNOWN = "pose_is_known"
HOLD = "hold"


# --- domain ---

@dataclass(frozen=True)
class ActionSchema:
    """STRIPS-style schema: role-named pre/effect atom templates plus a duration.

    Template atoms use role names as arguments; grounding substitutes the
    instance's arguments positionally.
    """

    name: str
    roles: tuple[str, ...]
    preconditions: tuple[Atom, ...]
    add_effects: tuple[Atom, ...]
    delete_effects: tuple[Atom, ...]
    duration: int

    def _binding(self, action: ActionInstance) -> dict[str, str]:
        if action.name != self.name or len(action.args) != len(self.roles):
            raise UnknownSymbol(f"{action} does not match schema {self.name}/{len(self.roles)}")
        return dict(zip(self.roles, action.args))

    def ground(self, template: Atom, action: ActionInstance) -> Atom:
        binding = self._binding(action)
        return Atom(template.pred, tuple(binding[a] for a in template.args))

    def ground_preconditions(self, action: ActionInstance) -> list[Atom]:
        return [self.ground(t, action) for t in self.preconditions]

    def ground_adds(self, action: ActionInstance) -> list[Atom]:
        return [self.ground(t, action) for t in self.add_effects]

    def ground_deletes(self, action: ActionInstance) -> list[Atom]:
        return [self.ground(t, action) for t in self.delete_effects]


@dataclass(frozen=True)
class Domain:
    properties: frozenset[str]
    constraints: frozenset[str]
    relations: frozenset[str]
    actions: dict[str, ActionSchema]
    skills: frozenset[str]
    # skill symbol -> (action name, goal relation) for subtask grounding
    skill_goals: dict[str, tuple[str, str]] = field(default_factory=dict)

    def schema(self, name: str) -> ActionSchema:
        try:
            return self.actions[name]
        except KeyError:
            raise UnknownSymbol(f"unknown action symbol {name!r}") from None

    def check_atom_symbol(self, atom: Atom) -> str:
        """Return the category ('property'|'constraint'|'relation') of an atom."""
        if atom.pred in self.properties:
            if len(atom.args) != 1:
                raise UnknownSymbol(f"property {atom.pred} is unary, got {atom}")
            return "property"
        if atom.pred in self.constraints:
            if len(atom.args) != 2:
                raise UnknownSymbol(f"constraint {atom.pred} is binary, got {atom}")
            return "constraint"
        if atom.pred in self.relations:
            if len(atom.args) != 2:
                raise UnknownSymbol(f"relation {atom.pred} is binary, got {atom}")
            return "relation"
        raise UnknownSymbol(f"unknown predicate symbol {atom.pred!r}")


def _t(pred: str, *args: str) -> Atom:
    return Atom(pred, args)


def default_domain() -> Domain:
    """The gearset assembly domain: two properties, four constraints, four
    relations, seven action primitives, three skills."""
    actions = {
        "pick_up": ActionSchema(
            "pick_up",
            ("tool", "obj"),
            (_t(IS_EMPTY, "tool"), _t(POSE_IS_KNOWN, "obj")),
            (_t(HOLD, "tool", "obj"),),
            (_t(IS_EMPTY, "tool"),),
            duration=8,
        ),
        "put_down": ActionSchema(
            "put_down",
            ("tool", "obj"),
            (_t(HOLD, "tool", "obj"),),
            (_t(IS_EMPTY, "tool"),),
            (_t(HOLD, "tool", "obj"),),
            duration=6,
        ),
        "insert": ActionSchema(
            "insert",
            ("tool", "part", "target"),
            (_t(HOLD, "tool", "part"), _t(POSE_IS_KNOWN, "target"), _t("can_insert_to", "part", "target")),
            (_t("is_inserted_to", "part", "target"), _t(IS_EMPTY, "tool")),
            (_t(HOLD, "tool", "part"),),
            duration=12,
        ),
        "engage": ActionSchema(
            "engage",
            ("tool", "part", "target"),
            (_t(HOLD, "tool", "part"), _t(POSE_IS_KNOWN, "target"), _t("can_engage_with", "part", "target")),
            (_t("is_engaged_with", "part", "target"), _t(IS_EMPTY, "tool")),
            (_t(HOLD, "tool", "part"),),
            duration=12,
        ),
        "place": ActionSchema(
            "place",
            ("tool", "part", "target"),
            (_t(HOLD, "tool", "part"), _t(POSE_IS_KNOWN, "target"), _t("can_place_on", "part", "target")),
            (_t("is_placed_on", "part", "target"), _t(IS_EMPTY, "tool")),
            (_t(HOLD, "tool", "part"),),
            duration=10,
        ),
        "retrieve_pose": ActionSchema(
            "retrieve_pose",
            ("obj",),
            (),
            (_t(POSE_IS_KNOWN, "obj"),),
            (),
            duration=4,
        ),
        # Tool changes swap can_manipulate capabilities, which live in the
        # constraint set; the (P, R) effect sets are empty.
        "change_tool": ActionSchema(
            "change_tool",
            ("robot", "tool"),
            (),
            (),
            (),
            duration=5,
        ),
    }
    return Domain(
        properties=frozenset({IS_EMPTY, POSE_IS_KNOWN}),
        constraints=frozenset({"can_manipulate", "can_insert_to", "can_engage_with", "can_place_on"}),
        relations=frozenset({"is_inserted_to", "is_engaged_with", "is_placed_on", HOLD}),
        actions=actions,
        skills=frozenset({"insert", "engage", "place"}),
        skill_goals={
            "insert": ("insert", "is_inserted_to"),
            "engage": ("engage", "is_engaged_with"),
            "place": ("place", "is_placed_on"),
        },
    )


# --- world state ---

@dataclass
class ConstraintSet:
    atoms: set[Atom] = field(default_factory=set)
    tool_capabilities: dict[str, list[str]] = field(default_factory=dict)

    def holds(self, atom: Atom) -> bool:
        return atom in self.atoms

    def copy(self) -> "ConstraintSet":
        return ConstraintSet(set(self.atoms), {k: list(v) for k, v in self.tool_capabilities.items()})


@dataclass
class WorldState:
    objects: frozenset[str]
    P: set[Atom] = field(default_factory=set)
    R: set[Atom] = field(default_factory=set)
    positions: dict[str, Position] = field(default_factory=dict)
    poses: dict[str, Pose] = field(default_factory=dict)

    def copy(self) -> "WorldState":
        return WorldState(self.objects, set(self.P), set(self.R), dict(self.positions), dict(self.poses))

    def atoms_doc(self) -> dict:
        return {
            "P": [a.to_doc() for a in sorted(self.P)],
            "R": [a.to_doc() for a in sorted(self.R)],
        }


def init_state(spec: dict, domain: Domain) -> tuple[WorldState, ConstraintSet]:
    """Build the initial believed state and constraint set from a setup document."""
    objects = frozenset(str(o) for o in spec.get("objects", []))
    state = WorldState(objects=objects)
    constraints = ConstraintSet(tool_capabilities={
        str(k): [str(o) for o in v] for k, v in spec.get("tool_capabilities", {}).items()
    })

    def load(docs, category: str, target: set[Atom]) -> None:
        for doc in docs:
            atom = Atom.from_doc(doc)
            cat = domain.check_atom_symbol(atom)
            if cat != category:
                raise UnknownSymbol(f"{atom} is a {cat} atom, expected {category}")
            for obj in atom.args:
                if obj not in objects:
                    raise UnknownObject(f"{atom} references unknown object {obj!r}")
            if atom in target:
                raise DuplicateAtom(str(atom))
            target.add(atom)

    load(spec.get("properties", []), "property", state.P)
    load(spec.get("relations", []), "relation", state.R)
    load(spec.get("constraints", []), "constraint", constraints.atoms)
    for pos_doc in (spec.get("positions") or {}).items():
        obj, xy = pos_doc
        if obj not in objects:
            raise UnknownObject(f"position for unknown object {obj!r}")
        state.positions[obj] = (float(xy[0]), float(xy[1]))
    # pose_is_known(o) in P iff poses has o; seed placeholders for any
    # initially-known poses.
    for atom in state.P:
        if atom.pred == POSE_IS_KNOWN:
            state.poses[atom.args[0]] = state.positions.get(atom.args[0], (0.0, 0.0)) + (0.0,)
    return state, constraints


def holds(state: WorldState, atom: Atom, domain: Domain, constraints: ConstraintSet) -> bool:
    category = domain.check_atom_symbol(atom)
    if category == "property":
        return atom in state.P
    if category == "relation":
        return atom in state.R
    return constraints.holds(atom)


def apply_effects(
    state: WorldState,
    action: ActionInstance,
    domain: Domain,
    constraints: ConstraintSet,
    check_preconditions: bool = True,
) -> WorldState:
    """Apply an action's declared add/delete effects (frame rule: nothing else)."""
    schema = domain.schema(action.name)
    if check_preconditions:
        for atom in schema.ground_preconditions(action):
            if not holds(state, atom, domain, constraints):
                raise PreconditionUnsatisfied(atom)
    new = state.copy()
    for atom in schema.ground_deletes(action):
        new.P.discard(atom)
        new.R.discard(atom)
        if atom.pred == POSE_IS_KNOWN:
            new.poses.pop(atom.args[0], None)
    for atom in schema.ground_adds(action):
        if domain.check_atom_symbol(atom) == "property":
            new.P.add(atom)
            if atom.pred == POSE_IS_KNOWN and atom.args[0] not in new.poses:
                xy = new.positions.get(atom.args[0], (0.0, 0.0))
                new.poses[atom.args[0]] = (xy[0], xy[1], 0.0)
        else:
            new.R.add(atom)
    if action.name == "change_tool":
        _apply_tool_change(constraints, action)
    return new


def _apply_tool_change(constraints: ConstraintSet, action: ActionInstance) -> None:
    # can_manipulate capabilities follow the active tool; other constraint
    # atoms are immutable facts.
    new_tool = action.args[1]
    constraints.atoms = {a for a in constraints.atoms if a.pred != "can_manipulate"}
    for obj in constraints.tool_capabilities.get(new_tool, []):
        constraints.atoms.add(Atom.of("can_manipulate", new_tool, obj))


def diff(a: WorldState, b: WorldState) -> dict[str, set[Atom]]:
    """Atom delta between two states, partitioned added/removed per P and R."""
    if a.objects != b.objects:
        raise DomainMismatch("states cover different object sets")
    return {
        "added_p": b.P - a.P,
        "removed_p": a.P - b.P,
        "added_r": b.R - a.R,
        "removed_r": a.R - b.R,
    }


# --- belief store (tick-facing adapter) ---

class BeliefStore:
    """Mutable holder of the believed WorldState with whole-state swaps.

    Implements the tick-facing Belief protocol: condition evaluation plus
    effect application on action success.
    """

    def __init__(self, state: WorldState, domain: Domain, constraints: ConstraintSet):
        self.state = state
        self.domain = domain
        self.constraints = constraints

    def holds(self, atom: Atom) -> bool:
        return holds(self.state, atom, self.domain, self.constraints)

    def apply_action_success(self, action: ActionInstance, payload: dict) -> None:
        new = apply_effects(self.state, action, self.domain, self.constraints,
                            check_preconditions=False)
        # The runtime reports final poses on completion; merging them keeps the
        # recorded geometry consistent with the relations just established.
        for obj, pose in (payload.get("final_poses") or {}).items():
            pose = tuple(float(v) for v in pose)
            new.positions[obj] = (pose[0], pose[1])
            if Atom.of(POSE_IS_KNOWN, obj) in new.P:
                new.poses[obj] = pose
        self.state = new

    def swap(self, state: WorldState) -> None:
        self.state = state

    def pose_of(self, obj: str) -> Pose | None:
        return self.state.poses.get(obj)


# --- virtual ticking (planning oracle) ---

class OracleRuntime:
    """Runtime in which every started action completes instantly."""

    def __init__(self) -> None:
        self._done: dict[str, ActionInstance] = {}

    def poll(self, node_id: str) -> bt.RuntimeStatus:
        return bt.RuntimeStatus.SUCCEEDED if node_id in self._done else bt.RuntimeStatus.IDLE

    def start(self, node_id: str, action: ActionInstance) -> None:
        self._done[node_id] = action

    def resume(self, node_id: str) -> None:  # pragma: no cover - never suspended
        pass

    def suspend(self, node_id: str) -> None:  # pragma: no cover - never suspended
        pass

    def consume(self, node_id: str) -> dict:
        self._done.pop(node_id)
        return {}


def virtual_tick(
    tree: bt.BehaviorTree,
    state: WorldState,
    domain: Domain,
    constraints: ConstraintSet,
    max_ticks: int = 100,
) -> WorldState:
    """Simulate a subtree to completion without time or a runtime.

    Raises :class:`VirtualFailure` when the tree returns Failure, signalling
    logical incoherence (the LCR oracle).
    """
    store = BeliefStore(state.copy(), domain, constraints.copy())
    runtime = OracleRuntime()
    for _ in range(max_ticks):
        result = bt.tick_traced(tree, store, runtime)
        if result.status is bt.Status.SUCCESS:
            return store.state
        if result.status is bt.Status.FAILURE:
            node = bt.failed_node(tree, result)
            raise VirtualFailure(node.node_id, node.atom)
    raise VirtualFailure(tree.root.node_id, None)


# --- perception reports and runtime update rules ---

@dataclass(frozen=True)
class M1Report:
    """Whole-scene tracking: coarse positions plus tracking flags."""

    positions: dict[str, Position]
    lost: frozenset[str] = frozenset()
    misassigned: frozenset[str] = frozenset()


@dataclass(frozen=True)
class M2Report:
    """Current-action pose estimation: covers only the action's objects."""

    poses: dict[str, Pose]


@dataclass(frozen=True)
class PerceptionParams:
    position_threshold: float = 1.0
    pose_threshold: float = 1.0


def _dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def update_state(
    prev: WorldState,
    current_action: ActionInstance | None,
    m1: M1Report,
    m2: M2Report,
    domain: Domain,
    params: PerceptionParams = PerceptionParams(),
) -> WorldState:
    """Apply the three maintenance rules; never inserts relations into R."""
    current_objects = set(current_action.args) if current_action else set()
    new = prev.copy()

    # Rule 2 (relation validity) runs against the previously recorded
    # positions, before rule 1 refreshes them.
    for rel in sorted(prev.R):
        oi, oj = rel.args
        if oi not in m1.positions or oj not in m1.positions:
            continue
        if oi not in prev.positions or oj not in prev.positions:
            continue
        rel_now = (m1.positions[oi][0] - m1.positions[oj][0],
                   m1.positions[oi][1] - m1.positions[oj][1])
        rel_prev = (prev.positions[oi][0] - prev.positions[oj][0],
                    prev.positions[oi][1] - prev.positions[oj][1])
        if _dist(rel_now, rel_prev) > params.position_threshold:
            new.R.discard(rel)
            if rel.pred == HOLD:
                # Losing a hold leaves the tool empty; without this the
                # executor could never re-grasp.
                new.P.add(Atom.of(IS_EMPTY, rel.args[0]))

    # Rule 1 (position invariance) for objects outside the current action.
    for obj in sorted(m1.positions):
        if obj in current_objects:
            continue
        pos = m1.positions[obj]
        if obj not in prev.positions or _dist(pos, prev.positions[obj]) > params.position_threshold:
            new.positions[obj] = pos

    # Rule 3 (pose consistency) for objects of the current action.
    for obj in sorted(m2.poses):
        if obj not in current_objects:
            continue
        known = Atom.of(POSE_IS_KNOWN, obj)
        if known not in new.P or obj not in new.poses:
            continue
        if _dist(m2.poses[obj], new.poses[obj]) > params.pose_threshold:
            new.P.discard(known)
            new.poses.pop(obj, None)

    return new
