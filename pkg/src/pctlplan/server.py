"""HTTP/JSON facade over the negotiation service.

Endpoints mirror the session operations one-to-one; every payload carries
a ``schema`` version field.  Sessions are held in memory, persisted to the
session store after each mutation, and guarded by one lock per session so
operations on a session serialize while distinct sessions run in parallel.
"""

from __future__ import annotations

import threading
from typing import Any, Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import service as sv
from .pctl import UpdateRule
from .service import (SCHEMA_VERSION, DomainError, PhaseError, Scenario,
                      SessionNotFound, SessionStore, StaleCandidateError,
                      bundled_scenario)


class CreateSessionBody(BaseModel):
    scenario: Any  # bundled scenario name, or an inline scenario object
    session_id: Optional[str] = None


class AcceptBody(BaseModel):
    candidate_id: Optional[str] = None  # None keeps the current formula
    deploy: bool = False
    seed: Optional[int] = None


class StepBody(BaseModel):
    eps: Optional[float] = None  # None draws from the session's seeded stream


class EventBody(BaseModel):
    rule: dict


def _http_error(exc: DomainError) -> HTTPException:
    if isinstance(exc, SessionNotFound):
        code = 404
    elif isinstance(exc, (StaleCandidateError, PhaseError)):
        code = 409
    else:
        code = 400
    return HTTPException(status_code=code,
                         detail={"schema": SCHEMA_VERSION, "error": str(exc)})


def _deployment_view(session: sv.Session) -> Optional[dict]:
    if session.deployment is None:
        return None
    dep, st = session.deployment, session.strategy
    traj = sv.deployment_positions(session)
    # every 32nd sample keeps the polyline faithful at 1/32 the payload
    return {
        "stage": dep.stage,
        "seed": dep.seed,
        "pose": [dep.pose.x, dep.pose.y, dep.pose.theta],
        "satisfied_up_to": st.satisfied_up_to,
        "cursor": st.cursor,
        "disc_radius": session.mdp.states[st.cursor].r,
        "trajectory": traj[::32].tolist(),
    }


def _session_view(session: sv.Session) -> dict:
    view = session.summary()
    view["environment"] = session.scenario.env.to_dict()
    view["formula_blocks"] = [
        {
            "phi": [c.text() for c in b.phi],
            "psi": [c.text() for c in b.psi],
            "p": b.p,
            "strict": b.strict,
        }
        for b in session.formula.blocks
    ]
    view["candidates"] = [c.to_dict() for c in session.candidates.values()]
    view["deployment"] = _deployment_view(session)
    return view


class _Registry:
    """In-memory session table with per-session write locks."""

    def __init__(self, store: SessionStore):
        self.store = store
        self.sessions: dict[str, sv.Session] = {}
        self.locks: dict[str, threading.Lock] = {}
        self._table_lock = threading.Lock()

    def insert(self, session: sv.Session) -> None:
        with self._table_lock:
            self.sessions[session.id] = session
            self.locks[session.id] = threading.Lock()

    def get(self, session_id: str) -> sv.Session:
        with self._table_lock:
            if session_id not in self.sessions:
                loaded = self.store.load(session_id)  # may raise SessionNotFound
                self.sessions[session_id] = loaded
                self.locks[session_id] = threading.Lock()
            return self.sessions[session_id]

    def lock(self, session_id: str) -> threading.Lock:
        with self._table_lock:
            return self.locks[session_id]


def create_app(store_root: str = "./pctlplan-data") -> FastAPI:
    app = FastAPI(title="pctlplan negotiation service")
    # the supervisor console is served as static files from another port
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    registry = _Registry(SessionStore(store_root))

    def mutate(session_id: str, fn) -> dict:
        try:
            session = registry.get(session_id)
        except DomainError as exc:
            raise _http_error(exc)
        with registry.lock(session_id):
            try:
                result = fn(session)
            except DomainError as exc:
                raise _http_error(exc)
            registry.store.save(session)
            return result

    @app.post("/sessions")
    def post_sessions(body: CreateSessionBody) -> dict:
        try:
            if isinstance(body.scenario, str):
                scenario = bundled_scenario(body.scenario)
            else:
                scenario = Scenario.from_dict(body.scenario)
            session = sv.create_session(scenario, session_id=body.session_id)
        except DomainError as exc:
            raise _http_error(exc)
        registry.insert(session)
        registry.store.save(session)
        return _session_view(session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        try:
            session = registry.get(session_id)
        except DomainError as exc:
            raise _http_error(exc)
        with registry.lock(session_id):  # point-in-time consistent copy
            return _session_view(session)

    @app.get("/sessions/{session_id}/candidates")
    def get_candidates(session_id: str, limit: int = Query(default=5)) -> dict:
        def fn(session):
            cands = sv.enumerate_relaxations(session, limit=limit)
            return {"schema": SCHEMA_VERSION, "revision": session.revision,
                    "candidates": [c.to_dict() for c in cands]}
        return mutate(session_id, fn)

    @app.post("/sessions/{session_id}/accept")
    def post_accept(session_id: str, body: AcceptBody) -> dict:
        def fn(session):
            sv.accept(session, body.candidate_id)
            if body.deploy:
                sv.deploy(session, seed=body.seed)
            return _session_view(session)
        return mutate(session_id, fn)

    @app.post("/sessions/{session_id}/step")
    def post_step(session_id: str, body: StepBody = StepBody()) -> dict:
        def fn(session):
            report = sv.step_deployment(session, eps=body.eps)
            report["schema"] = SCHEMA_VERSION
            return report
        return mutate(session_id, fn)

    @app.post("/sessions/{session_id}/event")
    def post_event(session_id: str, body: EventBody) -> dict:
        def fn(session):
            try:
                rule = UpdateRule.from_dict(body.rule)
            except Exception as exc:
                raise DomainError(f"malformed update rule: {exc}") from exc
            sv.environment_event(session, rule)
            return _session_view(session)
        return mutate(session_id, fn)

    return app
