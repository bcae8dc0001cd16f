"""Gearset workcell fixtures: setup documents, demonstration transcripts with
gold annotations, workcell geometry, and scripted disturbance scenarios.

The assembly has five stages over the objects base, shaft1..3, gear1, gear3,
compound_gear, and the gripper:

    0  insert gear1 into shaft1
    1  place shaft2 on the base
    2  insert compound_gear into shaft2
    3  place shaft3 on the base
    4  insert gear3 into shaft3
"""

from __future__ import annotations

from .atoms import Atom
from .planner import Subtask

OBJECTS = ("gripper", "base", "shaft1", "shaft2", "shaft3",
           "gear1", "gear3", "compound_gear")

GOLD_SUBTASKS = (
    Subtask("insert", "gear1", "shaft1"),
    Subtask("place", "shaft2", "base"),
    Subtask("insert", "compound_gear", "shaft2"),
    Subtask("place", "shaft3", "base"),
    Subtask("insert", "gear3", "shaft3"),
)

_NARRATION_STEPS = (
    "First, insert the gear1 into the shaft1.",
    "Then place the shaft2 on the base.",
    "Next, insert the compound_gear into the shaft2.",
    "After that, place the shaft3 on the base.",
    "Finally, insert the gear3 into the shaft3.",
)

_SCENES = (
    "The gripper lowers the gear1 onto the shaft1 mounted on the base.",
    "The shaft2 is set upright on the base plate.",
    "The compound_gear slides down the shaft2 until it seats.",
    "The shaft3 is set upright next to the shaft2.",
    "The gear3 is pushed onto the shaft3, meshing with the compound_gear.",
)

POSES = {
    "base": (50.0, 50.0, 0.0),
    "shaft1": (42.0, 52.0, 0.0),
    "shaft2": (78.0, 18.0, 0.0),
    "shaft3": (84.0, 24.0, 0.0),
    "gear1": (12.0, 20.0, 0.0),
    "gear3": (16.0, 32.0, 0.0),
    "compound_gear": (22.0, 42.0, 0.0),
    "gripper": (50.0, 80.0, 0.0),
}

DURATIONS = {
    "retrieve_pose": 4,
    "pick_up": 8,
    "put_down": 6,
    "insert": 12,
    "engage": 12,
    "place": 10,
    "change_tool": 5,
}


def gearset_setup() -> dict:
    """Setup document for the initial believed state."""
    parts = [o for o in OBJECTS if o not in ("gripper", "base")]
    return {
        "objects": list(OBJECTS),
        "properties": [Atom.of("is_empty", "gripper").to_doc()],
        "relations": [Atom.of("is_placed_on", "shaft1", "base").to_doc()],
        "constraints": [Atom.of("can_manipulate", "gripper", p).to_doc() for p in parts],
        "tool_capabilities": {"gripper": parts},
    }


def gearset_workcell() -> dict:
    """Ground-truth workcell fixture consumed by the simulator."""
    return {
        "poses": {o: list(p) for o, p in POSES.items()},
        "attachments": [{"part": "shaft1", "base": "base", "relation": "is_placed_on"}],
        "tool": "gripper",
        "durations": dict(DURATIONS),
        "insertion_tolerance": 2.0,
    }


def gearset_transcript(task_length: int = 5) -> dict:
    """Structured demonstration transcript for the first ``task_length`` stages."""
    if not 1 <= task_length <= 5:
        raise ValueError("task_length must be in 1..5")
    keyframes = [{"frame_id": i, "scene": _SCENES[i]} for i in range(task_length)]
    narration = " ".join(_NARRATION_STEPS[:task_length])
    return {
        "keyframes": keyframes,
        "narration": {"language": "en", "text": narration},
        "objects": list(OBJECTS),
    }


def gearset_gold(task_length: int = 5) -> dict:
    """Gold-annotation sidecar for a transcript of the given length."""
    subtasks = GOLD_SUBTASKS[:task_length]
    return {
        "subtasks": [t.to_doc() for t in subtasks],
        "constraints": [t.constraint().to_doc() for t in subtasks],
    }


def generation_corpus(videos: int = 10, task_length: int = 5) -> list[dict]:
    """Evaluation corpus: repeated gearset demonstrations with gold sidecars."""
    entry = {
        "transcript": gearset_transcript(task_length),
        "setup": gearset_setup(),
        "gold": gearset_gold(task_length),
    }
    return [dict(entry) for _ in range(videos)]


# --- disturbance scenarios (Fig. 6-style payloads) ---

def _disturbance_spec(task_length: int, kind: str) -> list[dict]:
    if kind == "none":
        return []
    if kind == "I":
        # Move the final part while the robot is approaching (grasping) it.
        part = GOLD_SUBTASKS[task_length - 1].part
        return [{
            "kind": "I",
            "trigger": {"when_action_running": {"name": "pick_up",
                                                "args": ["gripper", part],
                                                "min_progress": 3}},
            "payload": {"object": part, "displacement": [14.0, -9.0]},
        }]
    if kind == "II":
        # Displace a component not yet involved, during the first insertion.
        uninvolved = "compound_gear" if task_length < 3 else "gear3"
        if task_length >= 5:
            uninvolved = "gear3"
        return [{
            "kind": "II",
            "trigger": {"when_action_running": {"name": "insert",
                                                "args": ["gripper", "gear1", "shaft1"],
                                                "min_progress": 2}},
            "payload": {"object": uninvolved, "displacement": [11.0, 7.0]},
        }]
    if kind == "III":
        if task_length >= 4:
            # Extract the compound gear from shaft2 before the final insertion.
            return [{
                "kind": "III",
                "trigger": {"at_stage_start": task_length - 1},
                "payload": {"part": "compound_gear", "base": "shaft2",
                            "displacement": [16.0, -10.0]},
            }]
        if task_length >= 2:
            # Extract gear1 from shaft1 once a later stage has begun.
            return [{
                "kind": "III",
                "trigger": {"at_stage_start": task_length - 1},
                "payload": {"part": "gear1", "base": "shaft1",
                            "displacement": [16.0, -10.0]},
            }]
        # Single-stage variant: knock the held part out of the gripper.
        part = GOLD_SUBTASKS[0].part
        return [{
            "kind": "III",
            "trigger": {"when_action_running": {"name": "insert",
                                                "args": ["gripper", part, "shaft1"],
                                                "min_progress": 2}},
            "payload": {"part": part, "base": "gripper",
                        "displacement": [12.0, 9.0]},
        }]
    raise ValueError(f"unknown disturbance kind {kind!r}")


def gearset_scenario(task_length: int, kind: str = "none", seed: int = 0,
                     noise_level: float = 0.0) -> dict:
    """Scenario document: task length, scripted disturbances, noise, seed."""
    return {
        "task_length": task_length,
        "disturbances": _disturbance_spec(task_length, kind),
        "perception_noise": {"level": noise_level},
        "seed": seed,
        "position_threshold": 1.0,
        "pose_threshold": 1.0,
    }
