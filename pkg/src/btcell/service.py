"""HTTP interface for plan review and live runs.

Sessions are synchronous step machines: planning advances inside request
handlers and runs either complete inside the start call ("auto") or advance
in explicit tick batches ("stepped") so clients can interleave disturbance
injection deterministically.  Events carry monotone sequence numbers.
"""

from __future__ import annotations

import asyncio
import itertools
from dataclasses import dataclass, field
from typing import Callable

from fastapi import Body, FastAPI, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import bt, fixtures
from .errors import (
    BtcellError,
    InvalidDisturbance,
    MaxRoundsExceeded,
    WrongPhase,
)
from .executor import ExecutionConfig, Executor
from .planner import (
    DEFAULT_MAX_ROUNDS,
    DemonstrationTranscript,
    FaultyBackend,
    PlanBundle,
    PlannerBackend,
    RuleBackend,
    Subtask,
    interpret_demo,
    make_replanner,
    parse_interpretation,
    plan_action_sequence,
    synthesize_subtree,
)
from .sim import Disturbance, NoiseModel, WorkcellEnv
from .world import Domain, default_domain, init_state, virtual_tick

PHASES = ("planning", "awaiting_review", "executing", "finished")


class _RefineOnce(PlannerBackend):
    """Routes every request through the wrapped backend's refine path,
    carrying the reviewer's feedback text."""

    def __init__(self, inner: PlannerBackend, feedback: str):
        self.inner = inner
        self.feedback = feedback

    def interpret(self, request: dict) -> dict:
        return self.inner.refine(request, {}, self.feedback)

    def refine(self, request: dict, prior_reply: dict, feedback: str) -> dict:
        return self.inner.refine(request, prior_reply, feedback)


@dataclass
class SessionMachine:
    """One HITL session: staged planning with review gates, then one run."""

    session_id: str
    backend: PlannerBackend
    domain: Domain
    transcript_doc: dict
    setup_doc: dict
    workcell_doc: dict
    max_rounds: int = DEFAULT_MAX_ROUNDS
    phase: str = "planning"
    plan_ready: bool = False
    review_log: list[dict] = field(default_factory=list)
    pending_review: dict | None = None
    events: list[dict] = field(default_factory=list)
    _seq: int = 0

    def __post_init__(self):
        self.transcript = DemonstrationTranscript.from_doc(self.transcript_doc)
        self.state0, self.constraints = init_state(self.setup_doc, self.domain)
        self.subtasks: list[Subtask] = []
        self.snapshots = [self.state0]
        self.subtrees: list[bt.BehaviorTree] = []
        self.goals = []
        self.stage_index = -1  # -1 while interpretation is under review
        self._rounds: dict[str, int] = {}
        self.plan: PlanBundle | None = None
        self.executor: Executor | None = None
        self.run_mode = "auto"
        self._begin_interpretation()

    # --- planning pipeline ---

    def _begin_interpretation(self) -> None:
        subtasks, extra, _ = interpret_demo(
            self.transcript, self.transcript.objects, self.domain,
            self.backend, self.max_rounds)
        self.subtasks = subtasks
        self._extra_constraints = extra
        self._pend("interpretation", {"subtasks": [t.to_doc() for t in subtasks]})

    def _pend(self, stage: str, payload: dict, diagnostics: list[str] | None = None) -> None:
        self.pending_review = {"stage": stage, "payload": payload,
                               "diagnostics": diagnostics or [],
                               "round": self._rounds.get(stage, 0)}
        self.phase = "awaiting_review"

    def review(self, decision: dict) -> dict:
        if self.phase != "awaiting_review" or self.pending_review is None:
            raise WrongPhase(f"no review pending in phase {self.phase}")
        stage = self.pending_review["stage"]
        verdict = decision.get("verdict")
        feedback = str(decision.get("feedback", ""))
        if verdict not in ("approve", "feedback"):
            raise BtcellError(f"unknown verdict {verdict!r}")
        self.review_log.append({"stage": stage,
                                "round": self._rounds.get(stage, 0),
                                "verdict": verdict, "feedback": feedback})
        if verdict == "feedback":
            rounds = self._rounds.get(stage, 0) + 1
            if rounds > self.max_rounds:
                raise MaxRoundsExceeded(f"{stage} exceeded {self.max_rounds} refine rounds")
            self._rounds[stage] = rounds
            self._refine_current(stage, feedback)
            return {"phase": self.phase, "stage": stage, "round": rounds}
        self.pending_review = None
        self.phase = "planning"
        if stage == "interpretation":
            self.constraints.atoms |= self._extra_constraints
            self.stage_index = 0
        else:
            self._accept_current_subtree()
            self.stage_index += 1
        if self.stage_index >= len(self.subtasks):
            self._assemble_plan()
        else:
            self._synthesize_current()
        return {"phase": self.phase, "plan_ready": self.plan_ready}

    def _refine_current(self, stage: str, feedback: str) -> None:
        refiner = _RefineOnce(self.backend, feedback)
        if stage == "interpretation":
            request = {"kind": "interpret", "transcript": self.transcript.to_doc()}
            reply = refiner.interpret(request)
            self.subtasks, self._extra_constraints = parse_interpretation(
                reply, self.transcript.objects, self.domain)
            self._pend("interpretation",
                       {"subtasks": [t.to_doc() for t in self.subtasks]})
        else:
            self._synthesize_current(backend=refiner)

    def _synthesize_current(self, backend: PlannerBackend | None = None) -> None:
        backend = backend or self.backend
        i = self.stage_index
        subtask = self.subtasks[i]
        state = self.snapshots[i]
        diagnostics: list[str] = []
        try:
            actions = plan_action_sequence(subtask, state, self.domain,
                                           self.constraints, backend, self.max_rounds)
            tree = synthesize_subtree(subtask, actions, self.domain, self.constraints,
                                      state, backend, i, self.max_rounds)
        except BtcellError as exc:
            diagnostics.append(str(exc))
            tree = None
        self._current_tree = tree
        payload = {"subtask": subtask.to_doc(),
                   "tree": bt.serialize(tree) if tree is not None else None}
        self._pend(f"subtree {i}", payload, diagnostics)

    def _accept_current_subtree(self) -> None:
        i = self.stage_index
        tree = self._current_tree
        if tree is None:
            raise BtcellError(f"subtree {i} has no valid artifact to approve")
        next_state = virtual_tick(tree, self.snapshots[i], self.domain, self.constraints)
        self.subtrees.append(tree)
        self.goals.append(self.subtasks[i].goal_relation(self.domain))
        self.snapshots.append(next_state)

    def _assemble_plan(self) -> None:
        self.plan = PlanBundle(self.subtasks, self.constraints, self.subtrees,
                               self.goals, self.snapshots, list(self.review_log))
        self.plan_ready = True
        self.phase = "planning"

    # --- execution ---

    def start_run(self, scenario: dict, mode: str = "auto") -> dict:
        if not self.plan_ready or self.plan is None:
            raise WrongPhase(f"plan not approved (phase {self.phase})")
        if self.phase in ("executing", "finished"):
            raise WrongPhase(f"run already started (phase {self.phase})")
        seed = int(scenario.get("seed", 0))
        noise = NoiseModel.from_doc(scenario.get("perception_noise", {}))
        env = WorkcellEnv(self.workcell_doc, self.domain, seed=seed, noise=noise)
        cfg = ExecutionConfig(seed=seed)
        self.executor = Executor(self.plan, env, cfg,
                                 make_replanner(self.backend, self.domain),
                                 self.domain, scenario)
        self.run_mode = mode
        self.phase = "executing"
        if mode == "auto":
            self.executor.run()
            self._sync_events()
            self.phase = "finished"
        else:
            self._sync_events()
        return {"phase": self.phase, "mode": mode}

    def step(self, ticks: int) -> dict:
        if self.phase != "executing" or self.executor is None:
            raise WrongPhase(f"cannot step in phase {self.phase}")
        self.executor.step(ticks)
        self._sync_events()
        if self.executor.done:
            self.phase = "finished"
        return {"phase": self.phase, "ticks": self.executor.tick_count}

    def disturb(self, doc: dict) -> dict:
        if self.phase != "executing" or self.executor is None:
            raise WrongPhase(f"cannot inject in phase {self.phase}")
        disturbance = Disturbance.from_doc(doc)
        if disturbance.kind not in ("I", "II", "III"):
            raise InvalidDisturbance(f"unknown kind {disturbance.kind!r}")
        self.executor.post_disturbance(disturbance)
        return {"queued": True}

    def _sync_events(self) -> None:
        if self.executor is None:
            return
        trace = self.executor.trace
        while self._seq < len(trace):
            event = dict(trace[self._seq])
            event["seq"] = self._seq
            self.events.append(event)
            self._seq += 1

    # --- views ---

    def summary(self) -> dict:
        doc = {
            "session_id": self.session_id,
            "phase": self.phase,
            "plan_ready": self.plan_ready,
            "review_log": list(self.review_log),
            "n_events": len(self.events),
        }
        if self.plan is not None:
            doc["goals"] = [str(g) for g in self.plan.goals]
        return doc

    def metrics(self) -> dict:
        if self.executor is None:
            raise WrongPhase("no run has been started")
        return self.executor.metrics().to_doc()


def _error_response(exc: Exception, status: int) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"type": type(exc).__name__,
                                           "message": str(exc)}})


def create_app(backend_factory: Callable[[str, int], PlannerBackend] | None = None,
               domain: Domain | None = None) -> FastAPI:
    """Application factory; tests may inject a backend factory."""
    domain = domain or default_domain()
    counter = itertools.count(1)
    sessions: dict[str, SessionMachine] = {}

    def default_factory(name: str, seed: int) -> PlannerBackend:
        if name == "rule":
            return RuleBackend(domain)
        if name == "faulty":
            return FaultyBackend(RuleBackend(domain), seed=seed)
        raise BtcellError(f"unknown backend {name!r}")

    factory = backend_factory or default_factory
    app = FastAPI(title="btcell service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(WrongPhase)
    async def _wrong_phase(request, exc):
        return _error_response(exc, 409)

    @app.exception_handler(MaxRoundsExceeded)
    async def _max_rounds(request, exc):
        return _error_response(exc, 409)

    @app.exception_handler(InvalidDisturbance)
    async def _bad_disturbance(request, exc):
        return _error_response(exc, 422)

    @app.exception_handler(BtcellError)
    async def _domain_error(request, exc):
        return _error_response(exc, 422)

    def _get(session_id: str) -> SessionMachine:
        session = sessions.get(session_id)
        if session is None:
            raise WrongPhase(f"unknown session {session_id!r}")
        return session

    @app.post("/sessions")
    async def create_session(payload: dict = Body(...)):
        config = payload.get("config") or {}
        session_id = f"s{next(counter)}"
        try:
            session = SessionMachine(
                session_id=session_id,
                backend=factory(str(config.get("backend", "rule")),
                                int(config.get("seed", 0))),
                domain=domain,
                transcript_doc=payload["transcript"],
                setup_doc=payload["setup"],
                workcell_doc=payload.get("workcell") or fixtures.gearset_workcell(),
                max_rounds=int(config.get("max_rounds", DEFAULT_MAX_ROUNDS)),
            )
        except KeyError as exc:
            return _error_response(BtcellError(f"missing document {exc}"), 422)
        sessions[session_id] = session
        return {"session_id": session_id, "phase": session.phase}

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        return _get(session_id).summary()

    @app.get("/sessions/{session_id}/review")
    async def get_review(session_id: str):
        session = _get(session_id)
        if session.phase != "awaiting_review" or session.pending_review is None:
            raise WrongPhase(f"no review pending in phase {session.phase}")
        return session.pending_review

    @app.post("/sessions/{session_id}/review")
    async def post_review(session_id: str, payload: dict = Body(...)):
        return _get(session_id).review(payload)

    @app.post("/sessions/{session_id}/run")
    async def start_run(session_id: str, payload: dict = Body(...)):
        return _get(session_id).start_run(payload.get("scenario") or {},
                                          str(payload.get("mode", "auto")))

    @app.post("/sessions/{session_id}/step")
    async def step(session_id: str, payload: dict = Body(...)):
        return _get(session_id).step(int(payload.get("ticks", 1)))

    @app.post("/sessions/{session_id}/disturbance")
    async def post_disturbance(session_id: str, payload: dict = Body(...)):
        return _get(session_id).disturb(payload)

    @app.get("/sessions/{session_id}/events")
    async def get_events(session_id: str, since: int = 0):
        session = _get(session_id)
        session._sync_events()
        events = [e for e in session.events if e["seq"] >= since]
        return {"events": events, "next": len(session.events),
                "phase": session.phase}

    @app.get("/sessions/{session_id}/metrics")
    async def get_metrics(session_id: str):
        return _get(session_id).metrics()

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        await websocket.accept()
        session = sessions.get(session_id)
        if session is None:
            await websocket.close(code=4404)
            return
        cursor = 0
        try:
            while True:
                session._sync_events()
                while cursor < len(session.events):
                    await websocket.send_json(session.events[cursor])
                    cursor += 1
                if session.phase == "finished":
                    await websocket.send_json({"type": "stream_end", "seq": cursor})
                    await websocket.close()
                    return
                await asyncio.sleep(0.02)
        except WebSocketDisconnect:
            return

    app.state.sessions = sessions
    return app
