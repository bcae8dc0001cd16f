"""Simulated gearset workcell: ground-truth poses and attachments, timed
action execution, perception proxies M1/M2 with seeded error models, and
disturbance injection.

Ground truth is strictly separated from the executor's belief: only the
maintenance rules in :mod:`btcell.world` and action-completion payloads feed
belief; no belief read mutates ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .atoms import ActionInstance
from .bt import RuntimeStatus
from .errors import InvalidDisturbance
from .world import Domain, M1Report, M2Report, Pose

BtcellPose = Pose


@dataclass(frozen=True)
class NoiseModel:
    """Perception error model: per-cycle tracking loss and misassignment
    probabilities for M1, Gaussian pose deviation for M2."""

    loss_prob: float = 0.0
    misassign_prob: float = 0.0
    pose_sigma: float = 0.0

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls()

    @classmethod
    def scaled(cls, level: float) -> "NoiseModel":
        return cls(loss_prob=0.05 * level, misassign_prob=0.02 * level,
                   pose_sigma=0.8 * level)

    @classmethod
    def from_doc(cls, doc: dict | None) -> "NoiseModel":
        if not doc:
            return cls.zero()
        if "level" in doc:
            return cls.scaled(float(doc["level"]))
        return cls(float(doc.get("loss_prob", 0.0)),
                   float(doc.get("misassign_prob", 0.0)),
                   float(doc.get("pose_sigma", 0.0)))

    @property
    def is_zero(self) -> bool:
        return self.loss_prob == 0 and self.misassign_prob == 0 and self.pose_sigma == 0


@dataclass(frozen=True)
class Disturbance:
    """External disturbance: kind I displaces a current-action object, kind II
    an uninvolved object, kind III detaches an established attachment."""

    kind: str  # "I" | "II" | "III"
    trigger: dict
    payload: dict

    @classmethod
    def from_doc(cls, doc: dict) -> "Disturbance":
        kind = str(doc.get("kind"))
        if kind not in ("I", "II", "III"):
            raise InvalidDisturbance(f"unknown disturbance kind {kind!r}")
        return cls(kind, dict(doc.get("trigger", {})), dict(doc.get("payload", {})))

    def to_doc(self) -> dict:
        return {"kind": self.kind, "trigger": dict(self.trigger), "payload": dict(self.payload)}


@dataclass
class ActionRecord:
    node_id: str
    action: ActionInstance
    duration: int
    progress: int = 0
    suspended: bool = False
    status: RuntimeStatus = RuntimeStatus.RUNNING
    captured_poses: dict[str, Pose] = field(default_factory=dict)
    payload: dict = field(default_factory=dict)


@dataclass
class WorkcellState:
    poses: dict[str, Pose]
    attachments: dict[str, tuple[str, str]]  # part -> (base object, relation)
    tool: str = "gripper"
    held: str | None = None

    def induced_relations(self) -> set[tuple[str, str, str]]:
        rels = {(rel, part, base) for part, (base, rel) in self.attachments.items()}
        if self.held is not None:
            rels.add(("hold", self.tool, self.held))
        return rels


_CHECKED_OBJECT = {
    # action name -> index of the argument whose believed pose must match
    # ground truth at completion (within the insertion tolerance)
    "pick_up": 1,
    "insert": 2,
    "engage": 2,
    "place": 2,
}

_RELATION_OF = {"insert": "is_inserted_to", "engage": "is_engaged_with", "place": "is_placed_on"}


class WorkcellEnv:
    """Single-clock-owner simulator; also implements the ActionRuntime surface."""

    def __init__(self, fixture: dict, domain: Domain, seed: int = 0,
                 noise: NoiseModel | None = None):
        self.domain = domain
        self.noise = noise or NoiseModel.zero()
        self.state = WorkcellState(
            poses={o: tuple(float(v) for v in p) for o, p in fixture["poses"].items()},
            attachments={str(e["part"]): (str(e["base"]), str(e["relation"]))
                         for e in fixture.get("attachments", [])},
            tool=str(fixture.get("tool", "gripper")),
        )
        self.insertion_tolerance = float(fixture.get("insertion_tolerance", 2.0))
        self.durations = {str(k): int(v) for k, v in (fixture.get("durations") or {}).items()}
        self._rng = np.random.default_rng(seed)
        self._records: dict[str, ActionRecord] = {}
        self._active: str | None = None
        self.involved_objects: set[str] = set()
        self.events: list[dict] = []
        self.tick_count = 0
        self._belief_pose: Callable[[str], Pose | None] = lambda obj: None

    def set_belief_reader(self, reader: Callable[[str], Pose | None]) -> None:
        self._belief_pose = reader

    # --- ActionRuntime surface ---

    def poll(self, node_id: str) -> RuntimeStatus:
        record = self._records.get(node_id)
        if record is None:
            return RuntimeStatus.IDLE
        if record.status is RuntimeStatus.RUNNING and record.suspended:
            return RuntimeStatus.SUSPENDED
        return record.status

    def start(self, node_id: str, action: ActionInstance) -> None:
        duration = self.durations.get(action.name, self.domain.schema(action.name).duration)
        record = ActionRecord(node_id, action, duration)
        record.captured_poses = self._capture_belief(action)
        self._records[node_id] = record
        self._set_active(node_id)
        self.involved_objects.update(action.args)
        self.events.append({"type": "action_start", "node": node_id,
                            "action": action.to_doc(), "tick": self.tick_count})

    def resume(self, node_id: str) -> None:
        record = self._records[node_id]
        record.suspended = False
        record.captured_poses = self._capture_belief(record.action)
        self._set_active(node_id)
        self.events.append({"type": "action_resume", "node": node_id,
                            "action": record.action.to_doc(), "tick": self.tick_count})

    def suspend(self, node_id: str) -> None:
        record = self._records.get(node_id)
        if record is None or record.status is not RuntimeStatus.RUNNING:
            return
        record.suspended = True
        if self._active == node_id:
            self._active = None
        self.events.append({"type": "action_suspend", "node": node_id,
                            "action": record.action.to_doc(), "tick": self.tick_count})

    def consume(self, node_id: str) -> dict:
        record = self._records.pop(node_id)
        if self._active == node_id:
            self._active = None
        return record.payload

    def cancel_all(self) -> None:
        """Drop every action record (used when a subtree is replanned)."""
        self._records.clear()
        self._active = None

    def active_record(self) -> ActionRecord | None:
        return self._records.get(self._active) if self._active else None

    def _set_active(self, node_id: str) -> None:
        # One physically progressing action at a time; others stay suspended.
        if self._active is not None and self._active != node_id:
            self.suspend(self._active)
        self._active = node_id

    def _capture_belief(self, action: ActionInstance) -> dict[str, Pose]:
        captured = {}
        for obj in action.args:
            pose = self._belief_pose(obj)
            if pose is not None:
                captured[obj] = pose
        return captured

    def current_action(self) -> ActionInstance | None:
        """The action in progress, or just completed and not yet consumed."""
        if self._active is not None:
            return self._records[self._active].action
        for record in self._records.values():
            if record.status in (RuntimeStatus.SUCCEEDED, RuntimeStatus.FAILED):
                return record.action
        return None

    # --- clock ---

    def step(self) -> None:
        """Advance the active action by one tick, completing it at duration."""
        self.tick_count += 1
        if self._active is None:
            return
        record = self._records[self._active]
        record.progress += 1
        if record.progress >= record.duration:
            self._complete(record)

    def _complete(self, record: ActionRecord) -> None:
        action = record.action
        checked = _CHECKED_OBJECT.get(action.name)
        if checked is not None:
            obj = action.args[checked]
            believed = record.captured_poses.get(obj)
            actual = self.state.poses.get(obj)
            if believed is None or actual is None or \
                    _xy_dist(believed, actual) > self.insertion_tolerance:
                record.status = RuntimeStatus.FAILED
                self._active = None
                self.events.append({"type": "action_failed", "node": record.node_id,
                                    "action": action.to_doc(), "tick": self.tick_count,
                                    "reason": "pose deviation beyond tolerance"})
                return
        record.payload = self._apply_outcome(action)
        record.status = RuntimeStatus.SUCCEEDED
        self._active = None
        self.events.append({"type": "action_complete", "node": record.node_id,
                            "action": action.to_doc(), "tick": self.tick_count})

    def _apply_outcome(self, action: ActionInstance) -> dict:
        state = self.state
        poses = state.poses
        final: dict[str, Pose] = {}
        if action.name == "pick_up":
            tool, obj = action.args
            state.attachments.pop(obj, None)
            state.held = obj
            poses[tool] = poses[obj]
            final = {tool: poses[tool]}
        elif action.name == "put_down":
            tool, obj = action.args
            state.held = None
        elif action.name in _RELATION_OF:
            tool, part, target = action.args
            poses[part] = poses[target]
            poses[tool] = poses[target]
            state.attachments[part] = (target, _RELATION_OF[action.name])
            state.held = None
            final = {part: poses[part], tool: poses[tool]}
        elif action.name == "retrieve_pose":
            obj = action.args[0]
            final = {obj: self._noisy_pose(poses[obj])}
        elif action.name == "change_tool":
            state.tool = action.args[1]
        return {"final_poses": {o: list(p) for o, p in final.items()}}

    def _noisy_pose(self, pose: Pose) -> Pose:
        if self.noise.pose_sigma == 0:
            return pose
        dx, dy = self._rng.normal(0.0, self.noise.pose_sigma, size=2)
        return (pose[0] + dx, pose[1] + dy, pose[2])

    # --- perception proxies ---

    def sense(self) -> tuple[M1Report, M2Report]:
        """One perception cycle: whole-scene tracking plus current-action poses."""
        positions = {}
        lost = set()
        objects = sorted(self.state.poses)
        for obj in objects:
            if self.noise.loss_prob > 0 and self._rng.random() < self.noise.loss_prob:
                lost.add(obj)
                continue
            positions[obj] = (self.state.poses[obj][0], self.state.poses[obj][1])
        misassigned: set[str] = set()
        if self.noise.misassign_prob > 0 and self._rng.random() < self.noise.misassign_prob:
            present = sorted(positions)
            if len(present) >= 2:
                a, b = self._rng.choice(len(present), size=2, replace=False)
                oa, ob = present[int(a)], present[int(b)]
                positions[oa], positions[ob] = positions[ob], positions[oa]
                misassigned = {oa, ob}
        # M2 covers only the actively progressing action; motion of a
        # just-completed action is commanded, not unexpected.
        current = self._records[self._active].action if self._active else None
        m2_poses = {}
        if current is not None:
            for obj in current.args:
                if obj in self.state.poses:
                    m2_poses[obj] = self._noisy_pose(self.state.poses[obj])
        return (M1Report(positions, frozenset(lost), frozenset(misassigned)),
                M2Report(m2_poses))

    # --- disturbances ---

    def inject(self, disturbance: Disturbance) -> None:
        kind = disturbance.kind
        payload = disturbance.payload
        if kind in ("I", "II"):
            obj = payload.get("object")
            if obj not in self.state.poses:
                raise InvalidDisturbance(f"unknown object {obj!r}")
            current = self.current_action()
            involved_now = set(current.args) if current else set()
            if kind == "I" and obj not in involved_now:
                raise InvalidDisturbance(f"kind I must target an object of the current action, got {obj!r}")
            if kind == "II" and obj in self.involved_objects:
                raise InvalidDisturbance(f"kind II must target an uninvolved object, got {obj!r}")
            self._displace(obj, payload)
        else:
            part = payload.get("part")
            base = payload.get("base")
            edge = self.state.attachments.get(part)
            if edge is not None and edge[0] == base:
                del self.state.attachments[part]
            elif self.state.held == part and base == self.state.tool:
                self.state.held = None
            else:
                raise InvalidDisturbance(f"no attachment {part!r} -> {base!r}")
            self._displace(part, payload)
        self.events.append({"type": "disturbance_applied", "kind": kind,
                            "payload": dict(payload), "tick": self.tick_count})

    def _displace(self, obj: str, payload: dict) -> None:
        dx, dy = payload.get("displacement", (18.0, -12.0))
        x, y, yaw = self.state.poses[obj]
        self.state.poses[obj] = (x + float(dx), y + float(dy), yaw)

    def drain_events(self) -> list[dict]:
        events, self.events = self.events, []
        return events


def _xy_dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])
