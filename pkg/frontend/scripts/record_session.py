"""Record a scripted review-and-run session as an HTTP exchange fixture.

Drives the real service through its HTTP surface with the same call protocol
the browser console uses, and captures every request/response pair so the
console's tests can replay the exchange against an injected fetch without a
live server.

The run is stepped in fixed tick batches; a kind-I disturbance is posted the
first time the palette rule would enable its button (a running action touches
an object whose pose is currently known).

Run from the repository root:

    python3 frontend/scripts/record_session.py
"""

from __future__ import annotations

import json
import pathlib

from fastapi.testclient import TestClient

from btcell import fixtures
from btcell.service import create_app

FIXTURE_DIR = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"
STEP_TICKS = 10
NUDGE = [14, -9]


class Recorder:
    def __init__(self, client: TestClient):
        self.client = client
        self.exchanges: list[dict] = []

    def call(self, method: str, path: str, body: dict | None = None) -> dict:
        if method == "GET":
            response = self.client.get(path)
        else:
            response = self.client.post(path, json=body)
        doc = response.json()
        self.exchanges.append({
            "method": method,
            "path": path,
            "body": body,
            "status": response.status_code,
            "response": doc,
        })
        return doc


class PaletteMirror:
    """Mirror of the console's kind-I enablement rule over the event fold."""

    def __init__(self):
        self.objects: list[str] = []
        self.atoms: set[str] = set()
        self.running: dict[str, list[str]] = {}

    def fold(self, events: list[dict]) -> None:
        for event in events:
            kind = event["type"]
            if kind == "run_start":
                self.objects = list(event["objects"])
                self.atoms = set(event["atoms"]["P"]) | set(event["atoms"]["R"])
            elif kind == "state_update":
                for atom in event["removed_p"] + event["removed_r"]:
                    self.atoms.discard(atom)
                for atom in event["added_p"] + event["added_r"]:
                    self.atoms.add(atom)
            elif kind == "belief_update":
                for atom in event["removed"]:
                    self.atoms.discard(atom)
                for atom in event["added"]:
                    self.atoms.add(atom)
            elif kind in ("action_start", "action_resume"):
                self.running[event["node"]] = list(event["action"]["args"])
            elif kind in ("action_complete", "action_suspend"):
                self.running.pop(event["node"], None)

    def kind_one_doc(self) -> dict | None:
        candidates = sorted(
            arg
            for args in self.running.values()
            for arg in args
            if arg in self.objects and f"pose_is_known({arg})" in self.atoms
        )
        if not candidates:
            return None
        return {"kind": "I",
                "payload": {"object": candidates[0], "displacement": NUDGE}}


def main() -> None:
    client = TestClient(create_app())
    rec = Recorder(client)

    created = rec.call("POST", "/sessions", {
        "transcript": fixtures.gearset_transcript(3),
        "setup": fixtures.gearset_setup(),
    })
    sid = created["session_id"]
    base = f"/sessions/{sid}"

    # One feedback round on the interpretation, then approve everything.
    rec.call("GET", f"{base}/review")
    rec.call("POST", f"{base}/review",
             {"verdict": "feedback", "feedback": "recheck the first target"})
    rec.call("GET", f"{base}/review")
    for _ in range(4):
        reply = rec.call("POST", f"{base}/review", {"verdict": "approve"})
        if reply.get("phase") == "awaiting_review":
            rec.call("GET", f"{base}/review")

    # Stepped run over a scripted-detachment scenario; the live kind-I press
    # lands as soon as the palette rule allows it.
    scenario = fixtures.gearset_scenario(3, "III", seed=2)
    rec.call("POST", f"{base}/run", {"scenario": scenario, "mode": "stepped"})
    mirror = PaletteMirror()
    pressed = False
    while True:
        stepped = rec.call("POST", f"{base}/step", {"ticks": STEP_TICKS})
        page = rec.call("GET", f"{base}/events?since={mirror_cursor(rec)}")
        mirror.fold(page["events"])
        if stepped["phase"] == "finished":
            metrics = rec.call("GET", f"{base}/metrics")
            break
        if not pressed:
            doc = mirror.kind_one_doc()
            if doc is not None:
                rec.call("POST", f"{base}/disturbance", doc)
                pressed = True

    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    out = FIXTURE_DIR / "session.json"
    out.write_text(json.dumps({"exchanges": rec.exchanges}, sort_keys=True, indent=2)
                   + "\n", encoding="utf-8")

    events = [e["response"]["events"]
              for e in rec.exchanges if "/events?" in e["path"]]
    kinds = [e["type"] for page in events for e in page]
    print(f"wrote {out} ({len(rec.exchanges)} exchanges, {len(kinds)} events)")
    print("metrics:", metrics)
    for wanted in ("run_start", "disturbance", "rollback", "replan",
                   "self_recovery", "belief_update", "stage_complete", "run_end"):
        print(f"  {wanted}: {kinds.count(wanted)}")


def mirror_cursor(rec: Recorder) -> int:
    for exchange in reversed(rec.exchanges):
        if "/events?" in exchange["path"]:
            return int(exchange["response"]["next"])
    return 0


if __name__ == "__main__":
    main()
