"""HTTP front door: session lifecycle, turn submission, and a live
server-sent-event stream of transcript entries and plan-state snapshots.

The service runs the same engine as the virtual-clock harness, driven by the
wall-clock pump on a background thread. The API layer is stateless above the
engine: restarting against the same session log directory restores identical
transcript reads.
"""

from __future__ import annotations

import json
import queue
import threading
from typing import Iterator

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .config import EngineConfig
from .engine import Engine
from .errors import ConfigurationError, EngineError, NotFoundError, ValidityError
from .perception import ModalityPayload
from .sim import Scheduler

_STREAM_POLL_S = 0.1


class EngineService:
    """Owns the engine plus its wall-clock pump thread."""

    def __init__(self, config: EngineConfig):
        self.config = config
        self.sched = Scheduler(wall=True)
        self.engine = Engine(config, self.sched)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        if self._thread is not None:
            return
        self._thread = threading.Thread(target=self.sched.pump, args=(self._stop,),
                                        name="engine-pump", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    # -- thread-safe calls into the pump thread ---------------------------------

    def call(self, fn, *args, timeout_s: float = 10.0):
        """Run fn on the pump thread and wait for its result."""
        done = threading.Event()
        box: dict = {}

        def _run() -> None:
            try:
                box["value"] = fn(*args)
            except BaseException as exc:  # propagated to the caller thread
                box["error"] = exc
            done.set()

        self.sched.post(_run)
        if not done.wait(timeout_s):
            raise TimeoutError("engine did not respond in time")
        if "error" in box:
            raise box["error"]
        return box["value"]

    def submit_turn_blocking(self, session_id: str, payloads, client_turn_id,
                             timeout_s: float = 15.0) -> dict:
        rec = self.call(self.engine.submit_turn, session_id, payloads, None, client_turn_id)
        decided = threading.Event()

        def _on_done(_sig) -> None:
            decided.set()

        self.call(rec.routing_signal.on_done, _on_done)
        if not decided.wait(timeout_s):
            raise TimeoutError("routing decision did not resolve in time")
        if rec.routing_signal.error is not None:
            raise rec.routing_signal.error
        return {
            "accepted_at": rec.turn_start,
            "turn_id": rec.turn_id,
            "routing": json.loads(_decision_wire(rec.decision)),
        }


def _decision_wire(decision) -> str:
    from .routing import serialize_decision

    return serialize_decision(decision)


def _parse_payloads(body: dict) -> list[ModalityPayload]:
    raw = body.get("payloads")
    if raw is None:
        text = body.get("text", "")
        raw = [{"modality": "text", "data": text}]
    try:
        return [ModalityPayload.from_obj(obj) for obj in raw]
    except ValidityError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None


def create_app(service: EngineService) -> FastAPI:
    app = FastAPI(title="dualtrack", version="0.1.0")
    engine = service.engine

    @app.exception_handler(EngineError)
    async def _engine_error(_req: Request, exc: EngineError):
        status = 404 if isinstance(exc, NotFoundError) else 400
        return JSONResponse(status_code=status, content={"error": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "now_ms": service.sched.wall_now()}

    @app.post("/sessions")
    def open_session(body: dict):
        user_id = body.get("user_id", "anonymous")
        persona_id = body.get("persona_id", "companion")
        if body.get("memory_seed"):
            seed = body["memory_seed"]
            service.call(engine.seed_user_memory, user_id,
                         seed.get("profile"), seed.get("history", ()))
        try:
            state = service.call(engine.open_session, user_id, persona_id)
        except ConfigurationError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        return {"session_id": state.session_id}

    @app.post("/sessions/{session_id}/turns")
    def post_turn(session_id: str, body: dict):
        payloads = _parse_payloads(body)
        client_turn_id = body.get("client_turn_id")
        return service.submit_turn_blocking(session_id, payloads, client_turn_id)

    @app.get("/sessions/{session_id}/transcript")
    def transcript(session_id: str, from_seq: int = 0):
        entries = engine.store.transcript(session_id, from_seq)
        return [e.to_record() for e in entries]

    @app.get("/sessions/{session_id}/plan")
    def plan(session_id: str):
        return {"tasks": engine.plan_snapshots(session_id)}

    @app.get("/sessions/{session_id}/memory")
    def memory(session_id: str):
        state = engine.store.get(session_id)
        user = engine.memory.user(state.user_id)
        nuggets = [fact.statement for fact in user.history]
        if engine.memory.has_persona(state.persona_id):
            nuggets += [n.statement for n in
                        engine.memory.persona(state.persona_id).nuggets]
        return {"profile": dict(user.profile), "nuggets": nuggets}

    @app.get("/sessions/{session_id}/stream")
    def stream(session_id: str, from_seq: int = 0):
        try:
            engine.store.get(session_id)
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        if from_seq < 0:
            return StreamingResponse(
                iter([_frame({"type": "error", "error": f"bad from_seq {from_seq}"})]),
                media_type="text/event-stream",
            )
        return StreamingResponse(
            _stream_frames(service, session_id, from_seq),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    return app


def _frame(obj: dict) -> str:
    return f"data: {json.dumps(obj)}\n\n"


def _stream_frames(service: EngineService, session_id: str,
                   from_seq: int) -> Iterator[str]:
    engine = service.engine
    frames: queue.Queue = queue.Queue()
    next_seq = from_seq

    def on_entry(entry) -> None:
        frames.put({"type": "transcript", "entry": entry.to_record()})

    def on_plan(snapshot: dict, event_wire: dict) -> None:
        frames.put({"type": "event", "event": event_wire})
        frames.put({"type": "plan", **snapshot})

    remove_entry = engine.store.add_listener(session_id, on_entry)
    engine.add_plan_listener(session_id, on_plan)
    try:
        # replay history, then current plan state, then the live tail
        for entry in engine.store.transcript(session_id, from_seq):
            next_seq = entry.seq + 1
            yield _frame({"type": "transcript", "entry": entry.to_record()})
        for snapshot in engine.plan_snapshots(session_id):
            yield _frame({"type": "plan", **snapshot})
        while True:
            try:
                frame = frames.get(timeout=_STREAM_POLL_S)
            except queue.Empty:
                yield ": keepalive\n\n"
                continue
            if frame["type"] == "transcript":
                seq = frame["entry"]["seq"]
                if seq < next_seq:
                    continue  # duplicate delivery across replay/tail boundary
                next_seq = seq + 1
            yield _frame(frame)
    finally:
        remove_entry()
        engine.remove_plan_listener(session_id, on_plan)


def serve(config: EngineConfig, host: str = "127.0.0.1", port: int = 8787) -> None:
    import uvicorn

    service = EngineService(config)
    service.start()
    app = create_app(service)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        service.stop()
