"""Network front door: session lifecycle, streaming turns, and interruption.

Turns run over a per-session WebSocket: the client sends one JSON message per
turn and receives ordered JSON event envelopes back, with raw PCM audio
interleaved as binary frames (each announced by the preceding
``audio_chunk_meta`` event). Interrupts bypass the turn executor over a plain
POST so they are never stuck behind a busy stream.
"""

from __future__ import annotations

import asyncio
import queue as queue_mod
import threading
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, HTTPException, Request, WebSocket, WebSocketDisconnect

from .errors import CapacityExceeded, UnknownSession, UnknownTurn
from .orchestrator import Session
from .runtime import RuntimeConfig, build_session


@dataclass
class SessionHandle:
    session: Session
    seq: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def next_seq(self) -> int:
        with self.lock:
            self.seq += 1
            return self.seq


class SessionManager:
    def __init__(self, config: RuntimeConfig):
        self.config = config
        self.sessions: dict[str, SessionHandle] = {}
        self._lock = threading.Lock()

    def create(self, overrides: Optional[dict] = None) -> str:
        with self._lock:
            if len(self.sessions) >= self.config.max_sessions:
                raise CapacityExceeded(f"session limit {self.config.max_sessions} reached")
        config = self.config
        if overrides:
            import copy

            config = copy.deepcopy(self.config)
            for key, value in overrides.items():
                if hasattr(config, key) and key not in ("controller", "experts"):
                    setattr(config, key, value)
        deterministic = bool(overrides and overrides.get("deterministic"))
        session = build_session(config, deterministic=deterministic)
        with self._lock:
            if len(self.sessions) >= self.config.max_sessions:
                raise CapacityExceeded(f"session limit {self.config.max_sessions} reached")
            self.sessions[session.id] = SessionHandle(session=session)
        return session.id

    def get(self, session_id: str) -> SessionHandle:
        handle = self.sessions.get(session_id)
        if handle is None:
            raise UnknownSession(f"no session {session_id}")
        return handle


def build_app(config: Optional[RuntimeConfig] = None) -> FastAPI:
    config = config or RuntimeConfig()
    manager = SessionManager(config)
    app = FastAPI(title="modalmux gateway")
    app.state.manager = manager

    def check_auth(request: Request) -> None:
        if config.auth_token:
            header = request.headers.get("authorization", "")
            if header != f"Bearer {config.auth_token}":
                raise HTTPException(status_code=401, detail="bad token")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "sessions": len(manager.sessions)}

    @app.post("/sessions")
    async def create_session(request: Request) -> dict:
        check_auth(request)
        overrides = {}
        body = await request.body()
        if body:
            import json

            overrides = json.loads(body)
        try:
            session_id = manager.create(overrides)
        except CapacityExceeded as exc:
            raise HTTPException(status_code=429, detail=str(exc))
        return {"session_id": session_id}

    @app.post("/sessions/{session_id}/interrupt")
    def interrupt(session_id: str, request: Request) -> dict:
        check_auth(request)
        try:
            handle = manager.get(session_id)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        was_active = handle.session.interrupt()
        return {"was_active": was_active}

    @app.get("/sessions/{session_id}/trace/{turn_id}")
    def get_trace(session_id: str, turn_id: int, request: Request) -> dict:
        check_auth(request)
        try:
            handle = manager.get(session_id)
            trace = handle.session.snapshot_trace(turn_id)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except UnknownTurn as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        view = trace.stable_view()
        view["timings_ms"] = trace.timings_ms
        return view

    @app.get("/sessions/{session_id}/memory")
    def dump_memory(session_id: str, request: Request) -> dict:
        check_auth(request)
        try:
            handle = manager.get(session_id)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        store = handle.session.store
        return {
            "session_id": session_id,
            "records": [it.to_record() for it in store.items],
            "consistency": store.consistency_report(),
        }

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str) -> None:
        try:
            handle = manager.get(session_id)
        except UnknownSession:
            await websocket.close(code=4404)
            return
        if config.auth_token:
            token = websocket.query_params.get("token", "")
            if token != config.auth_token:
                await websocket.close(code=4401)
                return
        await websocket.accept()
        try:
            while True:
                message = await websocket.receive_json()
                await _run_turn(websocket, handle, message, config)
        except WebSocketDisconnect:
            return

    return app


async def _run_turn(
    websocket: WebSocket, handle: SessionHandle, message: dict, config: RuntimeConfig
) -> None:
    session = handle.session
    if "audio_label" in message:
        from .experts import make_labeled_audio

        user_input: object = make_labeled_audio(message["audio_label"])
    else:
        user_input = message.get("text", "")
    if isinstance(user_input, str) and len(user_input) > config.max_payload_bytes:
        await websocket.send_json({"kind": "turn_failed",
                                   "payload": {"error": "payload too large"},
                                   "seq": handle.next_seq(),
                                   "session_id": session.id, "turn_id": None})
        return

    out: queue_mod.Queue = queue_mod.Queue()

    def listener(kind: str, payload: dict) -> None:
        out.put(("event", kind, payload))

    def run() -> None:
        try:
            session.handle_turn(user_input, listener)
        except Exception as exc:  # surfaced to the client as a failure event
            out.put(("event", "turn_failed", {"turn_id": session.turn, "error": str(exc)}))
        out.put(("end", None, None))

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    terminal = {"turn_done", "interrupted", "turn_failed"}
    while True:
        item = await asyncio.to_thread(out.get)
        if item[0] == "end":
            break
        _, kind, payload = item
        samples = payload.pop("_samples", None)
        envelope = {
            "session_id": session.id,
            "turn_id": payload.get("turn_id"),
            "kind": kind,
            "payload": payload,
            "seq": handle.next_seq(),
        }
        await websocket.send_json(envelope)
        if samples is not None:
            await websocket.send_bytes(samples.tobytes())
        if kind in terminal:
            # drain the worker but stop forwarding; stream is terminated
            while True:
                nxt = await asyncio.to_thread(out.get)
                if nxt[0] == "end":
                    return
