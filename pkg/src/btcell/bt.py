"""Behavior-tree data model, serialization, and tick semantics.

Node semantics are reactive (memoryless): every tick restarts from the root,
conditions are re-evaluated against the current belief, and no child-index
memory is kept.  Running actions that a tick no longer reaches must be
suspended by the caller (see :func:`running_action_ids`).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Protocol

from .atoms import ActionInstance, Atom
from .errors import MalformedTree, NoFailure, SchemaViolation, UnknownAtom, UnknownSymbol

SEQUENCE = "sequence"
SELECTOR = "selector"
CONDITION = "condition"
ACTION = "action"

_CONTROL_KINDS = (SEQUENCE, SELECTOR)
_LEAF_KINDS = (CONDITION, ACTION)


class Status(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    RUNNING = "running"


class RuntimeStatus(enum.Enum):
    """Lifecycle of one action as seen through an :class:`ActionRuntime`."""

    IDLE = "idle"
    RUNNING = "running"
    SUSPENDED = "suspended"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


class Belief(Protocol):
    """Readable world-state snapshot with action-effect application."""

    def holds(self, atom: Atom) -> bool: ...

    def apply_action_success(self, action: ActionInstance, payload: dict) -> None: ...


class ActionRuntime(Protocol):
    """Asynchronous action execution surface, keyed by action node id."""

    def poll(self, node_id: str) -> RuntimeStatus: ...

    def start(self, node_id: str, action: ActionInstance) -> None: ...

    def resume(self, node_id: str) -> None: ...

    def suspend(self, node_id: str) -> None: ...

    def consume(self, node_id: str) -> dict: ...


@dataclass
class BTNode:
    kind: str
    node_id: str
    children: list["BTNode"] = field(default_factory=list)
    atom: Atom | None = None
    action: ActionInstance | None = None

    def iter_nodes(self) -> Iterator["BTNode"]:
        yield self
        for child in self.children:
            yield from child.iter_nodes()


@dataclass
class BehaviorTree:
    root: BTNode
    metadata: dict = field(default_factory=dict)


def sequence(node_id: str, children: list[BTNode]) -> BTNode:
    return BTNode(SEQUENCE, node_id, children=children)


def selector(node_id: str, children: list[BTNode]) -> BTNode:
    return BTNode(SELECTOR, node_id, children=children)


def condition(node_id: str, atom: Atom) -> BTNode:
    return BTNode(CONDITION, node_id, atom=atom)


def action_node(node_id: str, action: ActionInstance) -> BTNode:
    return BTNode(ACTION, node_id, action=action)


def validate_structure(root: BTNode, path: str = "root") -> None:
    """Check all node invariants, raising :class:`MalformedTree` on violation."""
    seen: set[str] = set()

    def check(node: BTNode, path: str) -> None:
        if node.kind not in _CONTROL_KINDS + _LEAF_KINDS:
            raise MalformedTree(f"{path}: unknown node kind {node.kind!r}")
        if not node.node_id:
            raise MalformedTree(f"{path}: empty node id")
        if node.node_id in seen:
            raise MalformedTree(f"{path}: duplicate node id {node.node_id!r}")
        seen.add(node.node_id)
        if node.kind in _CONTROL_KINDS:
            if not node.children:
                raise MalformedTree(f"{path}: {node.kind} node has no children")
            if node.atom is not None or node.action is not None:
                raise MalformedTree(f"{path}: control node carries leaf data")
        else:
            if node.children:
                raise MalformedTree(f"{path}: {node.kind} node has children")
            if node.kind == CONDITION and node.atom is None:
                raise MalformedTree(f"{path}: condition node without atom")
            if node.kind == ACTION and node.action is None:
                raise MalformedTree(f"{path}: action node without action")
        for i, child in enumerate(node.children):
            check(child, f"{path}.children[{i}]")

    check(root, path)


@dataclass
class TickResult:
    status: Status
    visited: list[tuple[str, Status]]
    statuses: dict[str, Status]


def tick(tree: BehaviorTree, belief: Belief, runtime: ActionRuntime) -> Status:
    return tick_traced(tree, belief, runtime).status


def tick_traced(tree: BehaviorTree, belief: Belief, runtime: ActionRuntime) -> TickResult:
    """One root-to-leaves tick in depth-first, left-to-right order."""
    validate_structure(tree.root)
    visited: list[tuple[str, Status]] = []
    statuses: dict[str, Status] = {}
    status = _tick_node(tree.root, belief, runtime, visited, statuses)
    return TickResult(status, visited, statuses)


def _tick_node(
    node: BTNode,
    belief: Belief,
    runtime: ActionRuntime,
    visited: list[tuple[str, Status]],
    statuses: dict[str, Status],
) -> Status:
    if node.kind == SEQUENCE:
        status = Status.SUCCESS
        for child in node.children:
            child_status = _tick_node(child, belief, runtime, visited, statuses)
            if child_status is not Status.SUCCESS:
                status = child_status
                break
    elif node.kind == SELECTOR:
        status = Status.FAILURE
        for child in node.children:
            child_status = _tick_node(child, belief, runtime, visited, statuses)
            if child_status is not Status.FAILURE:
                status = child_status
                break
    elif node.kind == CONDITION:
        try:
            status = Status.SUCCESS if belief.holds(node.atom) else Status.FAILURE
        except UnknownSymbol as exc:
            raise UnknownAtom(str(exc)) from exc
    else:  # ACTION
        status = _tick_action(node, belief, runtime)
    visited.append((node.node_id, status))
    statuses[node.node_id] = status
    return status


def _tick_action(node: BTNode, belief: Belief, runtime: ActionRuntime) -> Status:
    state = runtime.poll(node.node_id)
    if state is RuntimeStatus.IDLE:
        runtime.start(node.node_id, node.action)
        state = runtime.poll(node.node_id)
    elif state is RuntimeStatus.SUSPENDED:
        # Resuming keeps the action's simulated progress.
        runtime.resume(node.node_id)
        state = runtime.poll(node.node_id)
    if state is RuntimeStatus.RUNNING:
        return Status.RUNNING
    if state is RuntimeStatus.SUCCEEDED:
        payload = runtime.consume(node.node_id)
        belief.apply_action_success(node.action, payload)
        return Status.SUCCESS
    runtime.consume(node.node_id)
    return Status.FAILURE


def running_action_ids(result: TickResult, tree: BehaviorTree) -> set[str]:
    """Ids of action nodes that reported Running on this tick."""
    return {
        node.node_id
        for node in tree.root.iter_nodes()
        if node.kind == ACTION and result.statuses.get(node.node_id) is Status.RUNNING
    }


# --- action units ---

def make_action_unit(
    target: Atom,
    preconditions: list[Atom],
    action: ActionInstance,
    node_id: str = "unit",
    declared_effects: set[Atom] | None = None,
) -> BTNode:
    """Canonical action unit: Selector(target, Sequence(preconditions..., action)).

    With no preconditions the inner node is the bare action.  When
    ``declared_effects`` is given, the target must be among them.
    """
    from .errors import SchemaMismatch

    if declared_effects is not None and target not in declared_effects:
        raise SchemaMismatch(f"{target} is not an effect of {action}")
    act = action_node(f"{node_id}/act", action)
    if preconditions:
        pre = [condition(f"{node_id}/pre{i}", p) for i, p in enumerate(preconditions)]
        body: BTNode = sequence(f"{node_id}/seq", pre + [act])
    else:
        body = act
    return selector(node_id, [condition(f"{node_id}/target", target), body])


def action_unit_targets(root: BTNode) -> dict[str, tuple[BTNode, Atom]]:
    """Map action-node id -> (innermost enclosing action unit, target atom).

    Units are recognized structurally: a selector whose first child is a
    condition and whose remaining subtree contains the action leaf.  Later
    (deeper) selectors overwrite earlier ones, so a leaf is attributed to
    its closest enclosing unit rather than the stage-level selector.
    """
    units: dict[str, tuple[BTNode, Atom]] = {}
    for node in root.iter_nodes():
        if node.kind != SELECTOR or not node.children:
            continue
        head = node.children[0]
        if head.kind != CONDITION:
            continue
        for rest in node.children[1:]:
            for leaf in rest.iter_nodes():
                if leaf.kind == ACTION:
                    units[leaf.node_id] = (node, head.atom)
    return units


def find_unit_by_target(root: BTNode, atom: Atom) -> BTNode | None:
    """First action unit in the tree whose target equals ``atom``."""
    for unit, target in action_unit_targets(root).values():
        if target == atom:
            return unit
    return None


# --- failure localization ---

def failed_node(tree: BehaviorTree, last_trace: TickResult) -> BTNode:
    """Leftmost leaf whose Failure propagated to the root on the final tick."""
    if last_trace.status is not Status.FAILURE:
        raise NoFailure("last tick did not return Failure")

    def descend(node: BTNode) -> BTNode:
        if node.kind in _LEAF_KINDS:
            return node
        if node.kind == SEQUENCE:
            for child in node.children:
                if last_trace.statuses.get(child.node_id) is Status.FAILURE:
                    return descend(child)
        else:  # selector returning Failure: every child failed; take the leftmost
            return descend(node.children[0])
        raise NoFailure(f"no failing child under {node.node_id}")

    return descend(tree.root)


# --- serialization ---

def serialize(tree: BehaviorTree) -> dict:
    def node_doc(node: BTNode) -> dict:
        doc: dict = {"kind": node.kind, "id": node.node_id}
        if node.kind in _CONTROL_KINDS:
            doc["children"] = [node_doc(c) for c in node.children]
        elif node.kind == CONDITION:
            doc["atom"] = node.atom.to_doc()
        else:
            doc["action"] = node.action.to_doc()
        return doc

    return {"root": node_doc(tree.root), "metadata": dict(tree.metadata)}


def deserialize(document: dict) -> BehaviorTree:
    """Parse and validate a BT document; raises SchemaViolation with node path."""
    if not isinstance(document, dict) or "root" not in document:
        raise SchemaViolation("document must be an object with a 'root' node")

    def parse(doc: dict, path: str) -> BTNode:
        if not isinstance(doc, dict):
            raise SchemaViolation("node must be an object", path)
        kind = doc.get("kind")
        node_id = doc.get("id")
        if kind not in _CONTROL_KINDS + _LEAF_KINDS:
            raise SchemaViolation(f"unknown node kind {kind!r}", path)
        if not isinstance(node_id, str) or not node_id:
            raise SchemaViolation("missing or empty node id", path)
        if kind in _CONTROL_KINDS:
            children = doc.get("children")
            if not isinstance(children, list) or not children:
                raise SchemaViolation(f"{kind} node requires a non-empty children list", path)
            if "atom" in doc or "action" in doc:
                raise SchemaViolation("control node carries leaf fields", path)
            parsed = [parse(c, f"{path}.children[{i}]") for i, c in enumerate(children)]
            return BTNode(kind, node_id, children=parsed)
        if "children" in doc and doc["children"]:
            raise SchemaViolation(f"{kind} node must not have children", path)
        if kind == CONDITION:
            atom_doc = doc.get("atom")
            if not isinstance(atom_doc, dict) or "pred" not in atom_doc or "args" not in atom_doc:
                raise SchemaViolation("condition node requires an atom {pred, args}", path)
            return condition(node_id, Atom.from_doc(atom_doc))
        action_doc = doc.get("action")
        if not isinstance(action_doc, dict) or "name" not in action_doc or "args" not in action_doc:
            raise SchemaViolation("action node requires an action {name, args}", path)
        return action_node(node_id, ActionInstance.from_doc(action_doc))

    root = parse(document["root"], "root")
    tree = BehaviorTree(root, dict(document.get("metadata", {})))
    try:
        validate_structure(root)
    except MalformedTree as exc:
        raise SchemaViolation(str(exc)) from exc
    return tree
