"""Local control API served by each agent for consoles and scripts.

JSON over HTTP:

    GET  /v1/models            -> [{uid, name}]; ?detail=true adds states/transitions
    GET  /v1/state?uid=<hex>   -> active state, safety class, dwell, comm health
    POST /v1/events            -> {uid, event} applied as a local event
    GET  /v1/log?since=<id>    -> journal entries newer than <id>
    GET  /v1/stream            -> newline-delimited JSON notifications
                                  (state_change | fallback | comm_change)
"""

from __future__ import annotations

import json
import queue as queue_mod

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from .agent import AgentCore, UnknownModel
from .engine import NoMatch, RejectedUnsafe, Transitioned


class StateInfo(BaseModel):
    name: str
    safety_class: str
    max_dwell_ms: int | None = None
    fallback: str | None = None


class ModelInfo(BaseModel):
    uid: str
    name: str
    initial: str | None = None
    states: list[StateInfo] | None = None
    # transition dicts keep their wire keys ("from", "to", "on") as-is
    transitions: list[dict] | None = None


class CommInfo(BaseModel):
    state: str
    consecutive_failures: int


class StateResponse(BaseModel):
    uid: str
    active: str
    safety_class: str
    dwell_remaining_ms: int | None
    pending_fallback: str | None
    comm: CommInfo


class EventRequest(BaseModel):
    uid: str
    event: str


class EventResponse(BaseModel):
    outcome: str  # transitioned | no_match | rejected_unsafe
    from_state: str | None = None
    to_state: str | None = None
    reason: str | None = None


class LogResponse(BaseModel):
    entries: list[dict]
    latest: int


def _parse_uid(text: str) -> bytes:
    try:
        uid = bytes.fromhex(text)
    except ValueError:
        raise HTTPException(status_code=400, detail="uid must be hex") from None
    if len(uid) != 16:
        raise HTTPException(status_code=400, detail="uid must be 32 hex chars")
    return uid


def create_agent_api(core: AgentCore, raise_event=None,
                     stream_keepalive_s: float = 15.0) -> FastAPI:
    """Build the app around one AgentCore; raise_event defaults to the core itself
    (the threaded Agent passes its own hook so the push writer wakes up)."""
    if raise_event is None:
        raise_event = core.on_local_event
    app = FastAPI(title="modelsink agent", version="0.1.0")

    @app.get("/v1/models", response_model=list[ModelInfo], response_model_exclude_none=True)
    def models(detail: bool = Query(default=False)):
        return core.models_view(detail=detail)

    @app.get("/v1/state", response_model=StateResponse)
    def state(uid: str):
        try:
            return core.state_view(_parse_uid(uid))
        except UnknownModel as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None

    @app.post("/v1/events", response_model=EventResponse, response_model_exclude_none=True)
    def events(req: EventRequest):
        try:
            outcome = raise_event(_parse_uid(req.uid), req.event)
        except UnknownModel as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        if isinstance(outcome, Transitioned):
            return EventResponse(outcome="transitioned",
                                 from_state=outcome.from_state,
                                 to_state=outcome.to_state)
        if isinstance(outcome, RejectedUnsafe):
            return EventResponse(outcome="rejected_unsafe", reason=outcome.reason)
        assert isinstance(outcome, NoMatch)
        return EventResponse(outcome="no_match")

    @app.get("/v1/log", response_model=LogResponse)
    def log(since: int = Query(default=0)):
        entries = core.journal_since(since)
        latest = entries[-1]["id"] if entries else since
        return LogResponse(entries=entries, latest=latest)

    @app.get("/v1/stream")
    def stream():
        sub = core.subscribe()

        def gen():
            try:
                while True:
                    try:
                        entry = sub.get(timeout=stream_keepalive_s)
                        yield json.dumps(entry) + "\n"
                    except queue_mod.Empty:
                        yield "\n"  # keepalive so proxies and clients see liveness
            finally:
                core.unsubscribe(sub)

        return StreamingResponse(gen(), media_type="application/x-ndjson")

    return app
