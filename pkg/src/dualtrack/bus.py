"""Event-driven synchronization between the fast and slow tracks.

Per-session event queue with per-task causal ordering, duplicate marking,
terminal-once enforcement, replay for late subscribers, and exactly-once
integration of slow-track outputs into the live transcript.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import BusRejection
from .state import SessionStore

EVENT_KINDS = ("progress", "artifact", "clarification", "final", "failure")
TERMINAL_KINDS = ("final", "failure")


@dataclass
class StateUpdateEvent:
    event_id: str
    session_id: str
    task_id: str
    kind: str
    payload: object
    causal_seq: int
    emitted_at: float

    def to_wire(self) -> dict:
        return {
            "event_id": self.event_id,
            "session_id": self.session_id,
            "task_id": self.task_id,
            "kind": self.kind,
            "payload": self.payload,
            "causal_seq": self.causal_seq,
            "emitted_at": self.emitted_at,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "StateUpdateEvent":
        return cls(**{k: obj[k] for k in (
            "event_id", "session_id", "task_id", "kind", "payload",
            "causal_seq", "emitted_at")})


@dataclass
class _TaskStream:
    next_seq: int = 1
    pending: dict[int, StateUpdateEvent] = field(default_factory=dict)
    terminal_emitted: bool = False


class Subscription:
    """Ordered event feed for one session; replays history, then tails."""

    def __init__(self) -> None:
        self.events: list[StateUpdateEvent] = []
        self._callbacks: list[Callable[[StateUpdateEvent], None]] = []

    def push(self, event: StateUpdateEvent) -> None:
        self.events.append(event)
        for cb in self._callbacks:
            cb(event)

    def on_event(self, cb: Callable[[StateUpdateEvent], None]) -> None:
        """Attach a consumer: it sees the backlog first, then the live tail."""
        for event in list(self.events):
            cb(event)
        self._callbacks.append(cb)


class SessionBus:
    """In-process bus; delivery order per task follows causal_seq densely."""

    def __init__(self, log_dir: str | Path | None = None):
        self._streams: dict[str, dict[str, _TaskStream]] = {}
        self._known_tasks: dict[str, set[str]] = {}
        self._seen_ids: dict[str, set[str]] = {}
        self._delivered: dict[str, list[StateUpdateEvent]] = {}
        self._subs: dict[str, list[Subscription]] = {}
        self._log_dir = Path(log_dir) if log_dir else None
        if self._log_dir:
            self._log_dir.mkdir(parents=True, exist_ok=True)
        self.duplicates_marked = 0
        self.rejected = 0

    # -- registration ------------------------------------------------------------

    def register_session(self, session_id: str) -> None:
        self._streams.setdefault(session_id, {})
        self._known_tasks.setdefault(session_id, set())
        self._seen_ids.setdefault(session_id, set())
        self._delivered.setdefault(session_id, [])
        self._subs.setdefault(session_id, [])

    def register_task(self, session_id: str, task_id: str) -> None:
        self.register_session(session_id)
        self._known_tasks[session_id].add(task_id)
        self._streams[session_id].setdefault(task_id, _TaskStream())

    # -- producer side -------------------------------------------------------------

    def emit(self, event: StateUpdateEvent) -> str:
        """Enqueue an event. Returns 'queued', 'duplicate', or raises BusRejection.

        Duplicate event ids are accepted but marked (and not redelivered);
        a second terminal event for a task is rejected.
        """
        if event.kind not in EVENT_KINDS:
            raise BusRejection(f"unknown event kind {event.kind!r}")
        tasks = self._known_tasks.get(event.session_id)
        if tasks is None or event.task_id not in tasks:
            self.rejected += 1
            raise BusRejection(
                f"event {event.event_id!r} for unregistered task {event.task_id!r}"
            )
        seen = self._seen_ids[event.session_id]
        if event.event_id in seen:
            self.duplicates_marked += 1
            return "duplicate"
        stream = self._streams[event.session_id][event.task_id]
        if event.kind in TERMINAL_KINDS and stream.terminal_emitted:
            self.rejected += 1
            raise BusRejection(
                f"terminal event already emitted for task {event.task_id!r}"
            )
        seen.add(event.event_id)
        if event.kind in TERMINAL_KINDS:
            stream.terminal_emitted = True
        stream.pending[event.causal_seq] = event
        self._flush(event.session_id, event.task_id, stream)
        return "queued"

    def _flush(self, session_id: str, task_id: str, stream: _TaskStream) -> None:
        while stream.next_seq in stream.pending:
            event = stream.pending.pop(stream.next_seq)
            stream.next_seq += 1
            self._deliver(session_id, event)

    def _deliver(self, session_id: str, event: StateUpdateEvent) -> None:
        self._delivered[session_id].append(event)
        self._write_log(event)
        for sub in self._subs[session_id]:
            sub.push(event)

    # -- consumer side ----------------------------------------------------------------

    def subscribe(self, session_id: str, from_seq: int = 0) -> Subscription:
        """Replays delivered events from `from_seq` (delivery index), then tails."""
        self.register_session(session_id)
        sub = Subscription()
        self._subs[session_id].append(sub)
        for event in self._delivered[session_id][from_seq:]:
            sub.push(event)
        return sub

    def delivered(self, session_id: str) -> list[StateUpdateEvent]:
        return list(self._delivered.get(session_id, ()))

    def _write_log(self, event: StateUpdateEvent) -> None:
        if not self._log_dir:
            return
        path = self._log_dir / f"{event.session_id}.events.jsonl"
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event.to_wire(), sort_keys=True) + "\n")


class Integrator:
    """Folds delivered events into the transcript, exactly once per event id.

    Progress events update the plan view only. Terminal events shrink the
    session's pending task set. Artifact surfacing is config-gated.
    """

    def __init__(self, store: SessionStore, surface_artifacts: bool = True,
                 on_terminal: Callable[[StateUpdateEvent], None] | None = None,
                 on_plan_update: Callable[[StateUpdateEvent], None] | None = None):
        self._store = store
        self._surface_artifacts = surface_artifacts
        self._on_terminal = on_terminal
        self._on_plan_update = on_plan_update
        self._integrated: set[str] = set()
        self.duplicate_attempts = 0

    def integrate(self, event: StateUpdateEvent) -> int | None:
        """Returns the new transcript seq, or None when nothing was appended."""
        if event.kind == "progress":
            if self._on_plan_update:
                self._on_plan_update(event)
            return None
        if event.event_id in self._integrated:
            self.duplicate_attempts += 1
            return None
        session = self._store.get(event.session_id)
        if event.kind == "clarification":
            self._integrated.add(event.event_id)
            return self._store.append(
                event.session_id, "assistant", "clarification",
                str(event.payload), source_event_id=event.event_id,
            )
        if event.kind == "artifact":
            self._integrated.add(event.event_id)
            if not self._surface_artifacts:
                return None
            return self._store.append(
                event.session_id, "system-integration", "progress-note",
                str(event.payload), source_event_id=event.event_id,
            )
        # terminal: final | failure
        self._integrated.add(event.event_id)
        seq = self._store.append(
            event.session_id, "assistant", "deliverable",
            str(event.payload), source_event_id=event.event_id,
        )
        session.pending_tasks.discard(event.task_id)
        if self._on_terminal:
            self._on_terminal(event)
        if self._on_plan_update:
            self._on_plan_update(event)
        return seq
