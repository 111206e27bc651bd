"""Per-session shared state: ordered transcript, dual memory, working memory.

The session store is the synchronization barrier between the fast and slow
tracks: every transcript mutation passes through one per-session writer lock,
which is what makes the exactly-once and ordering guarantees checkable.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .errors import ConfigurationError, EngineError, NotFoundError
from .util import normalize_text, token_estimate

ROLES = ("user", "assistant", "system-integration")
ENTRY_KINDS = ("turn", "bridge", "deliverable", "clarification", "progress-note")


@dataclass
class TranscriptEntry:
    seq: int
    role: str
    kind: str
    content: str
    source_event_id: str | None
    timestamp: float

    def to_record(self) -> dict:
        return {
            "seq": self.seq,
            "role": self.role,
            "kind": self.kind,
            "content": self.content,
            "source_event_id": self.source_event_id,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TranscriptEntry":
        return cls(
            seq=rec["seq"],
            role=rec["role"],
            kind=rec["kind"],
            content=rec["content"],
            source_event_id=rec.get("source_event_id"),
            timestamp=rec["timestamp"],
        )


@dataclass
class TraceItem:
    """One working-memory item of the agent's reasoning trajectory."""

    task_id: str
    step_id: str
    payload: str
    token_estimate: int
    folded: bool = False


@dataclass(frozen=True)
class HistoryFact:
    """Immutable distilled fact in a user's long-term history."""

    statement: str
    provenance: str
    created_at: float


@dataclass(frozen=True)
class KnowledgeNugget:
    nugget_id: str
    statement: str
    scope: str  # user | agent
    provenance: str  # episode id
    created_at: float


@dataclass
class UserMemory:
    user_id: str
    profile: dict[str, str] = field(default_factory=dict)
    history: list[HistoryFact] = field(default_factory=list)
    session_refs: list[str] = field(default_factory=list)


@dataclass
class AgentMemory:
    persona_id: str
    persona: str
    traits: list[str] = field(default_factory=list)
    knowledge_base: list[dict] = field(default_factory=list)
    nuggets: list[KnowledgeNugget] = field(default_factory=list)


@dataclass
class SessionState:
    session_id: str
    user_id: str
    persona_id: str
    transcript: list[TranscriptEntry] = field(default_factory=list)
    working_memory: list[TraceItem] = field(default_factory=list)
    pending_tasks: set[str] = field(default_factory=set)
    created_at: float = 0.0
    last_active_at: float = 0.0


@dataclass
class ContextBundle:
    profile: dict[str, str]
    entries: list[TranscriptEntry]
    token_total: int


class MemoryStore:
    """Dual memory: per-user memory and per-persona agent memory."""

    def __init__(self) -> None:
        self._users: dict[str, UserMemory] = {}
        self._agents: dict[str, AgentMemory] = {}
        self._statements: dict[str, set[str]] = {}  # owner key -> normalized statements
        self._lock = threading.Lock()

    def register_persona(self, memory: AgentMemory) -> None:
        if not memory.persona:
            raise ConfigurationError("persona descriptor must be non-empty")
        self._agents[memory.persona_id] = memory

    def has_persona(self, persona_id: str) -> bool:
        return persona_id in self._agents

    def persona(self, persona_id: str) -> AgentMemory:
        try:
            return self._agents[persona_id]
        except KeyError:
            raise ConfigurationError(f"unknown persona: {persona_id!r}") from None

    def user(self, user_id: str) -> UserMemory:
        mem = self._users.get(user_id)
        if mem is None:
            mem = UserMemory(user_id=user_id)
            self._users[user_id] = mem
        return mem

    def seed_user(self, user_id: str, profile: dict[str, str] | None = None,
                  history: Iterable[str] = (), created_at: float = 0.0) -> UserMemory:
        mem = self.user(user_id)
        if profile:
            mem.profile.update(profile)
        for statement in history:
            fact = HistoryFact(statement=statement, provenance="seed", created_at=created_at)
            mem.history.append(fact)
            self._statements.setdefault(f"user:{user_id}", set()).add(normalize_text(statement))
        return mem

    def commit_nugget(self, owner: str, owner_id: str, nugget: KnowledgeNugget) -> bool:
        """Append a distilled nugget; exact duplicate statements are rejected.

        Returns True when the statement was new and stored.
        """
        if owner not in ("user", "agent"):
            raise ValueError(f"owner must be user|agent, got {owner!r}")
        if len(nugget.statement) > 200:
            raise EngineError("nugget statement exceeds 200 characters")
        key = f"{owner}:{owner_id}"
        norm = normalize_text(nugget.statement)
        with self._lock:
            seen = self._statements.setdefault(key, set())
            if norm in seen:
                return False
            seen.add(norm)
            if owner == "user":
                self.user(owner_id).history.append(
                    HistoryFact(nugget.statement, nugget.provenance, nugget.created_at)
                )
            else:
                agent = self.persona(owner_id)
                if any(n.nugget_id == nugget.nugget_id for n in agent.nuggets):
                    return False
                agent.nuggets.append(nugget)
        return True


class SessionStore:
    """Owns every live session; all mutations funnel through one writer lock
    per session so transcript sequence numbers are gap-free under racing
    producers."""

    def __init__(self, memory: MemoryStore, now_fn: Callable[[], float],
                 log_dir: str | Path | None = None):
        self._memory = memory
        self._now = now_fn
        self._sessions: dict[str, SessionState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._store_lock = threading.Lock()
        self._counter = 0
        self._log_dir = Path(log_dir) if log_dir else None
        self._listeners: dict[str, list[Callable[[TranscriptEntry], None]]] = {}
        self._deliverable_events: dict[str, set[str]] = {}
        if self._log_dir:
            self._log_dir.mkdir(parents=True, exist_ok=True)
            self._restore_from_logs()

    # -- lifecycle -----------------------------------------------------------

    def create_session(self, user_id: str, persona_id: str) -> SessionState:
        if not self._memory.has_persona(persona_id):
            raise ConfigurationError(f"unknown persona: {persona_id!r}")
        now = self._now()
        with self._store_lock:
            self._counter += 1
            session_id = f"s{self._counter:06d}"
            state = SessionState(
                session_id=session_id,
                user_id=user_id,
                persona_id=persona_id,
                created_at=now,
                last_active_at=now,
            )
            self._sessions[session_id] = state
            self._locks[session_id] = threading.Lock()
            self._deliverable_events[session_id] = set()
        self._memory.user(user_id).session_refs.append(session_id)
        return state

    def get(self, session_id: str) -> SessionState:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise NotFoundError(f"unknown session: {session_id!r}") from None

    def session_ids(self) -> list[str]:
        return list(self._sessions)

    def memory(self) -> MemoryStore:
        return self._memory

    # -- transcript ------------------------------------------------------------

    def append(self, session_id: str, role: str, kind: str, content: str,
               source_event_id: str | None = None) -> int:
        """Assign the next sequence number and append; the serialization point."""
        if role not in ROLES:
            raise EngineError(f"bad role: {role!r}")
        if kind not in ENTRY_KINDS:
            raise EngineError(f"bad entry kind: {kind!r}")
        if kind == "deliverable" and not source_event_id:
            raise EngineError("deliverable entries require a source_event_id")
        state = self.get(session_id)
        lock = self._locks[session_id]
        with lock:
            if kind == "deliverable":
                seen = self._deliverable_events[session_id]
                if source_event_id in seen:
                    raise EngineError(
                        f"duplicate deliverable for event {source_event_id!r}"
                    )
                seen.add(source_event_id)
            entry = TranscriptEntry(
                seq=len(state.transcript),
                role=role,
                kind=kind,
                content=content,
                source_event_id=source_event_id,
                timestamp=self._now(),
            )
            state.transcript.append(entry)
            state.last_active_at = entry.timestamp
            self._write_log(state, entry)
            listeners = list(self._listeners.get(session_id, ()))
        for fn in listeners:
            fn(entry)
        return entry.seq

    def transcript(self, session_id: str, from_seq: int = 0) -> list[TranscriptEntry]:
        state = self.get(session_id)
        with self._locks[session_id]:
            return list(state.transcript[from_seq:])

    def add_listener(self, session_id: str, fn: Callable[[TranscriptEntry], None]) -> Callable[[], None]:
        self.get(session_id)
        self._listeners.setdefault(session_id, []).append(fn)

        def remove() -> None:
            try:
                self._listeners[session_id].remove(fn)
            except ValueError:
                pass

        return remove

    # -- context ---------------------------------------------------------------

    def read_context(self, session_id: str, token_budget: int) -> ContextBundle:
        """Most-recent transcript suffix plus profile, within the budget.

        Profile entries are never dropped; the newest transcript entries win
        under truncation. Deterministic for a fixed session snapshot.
        """
        if token_budget <= 0:
            raise ValueError("token_budget must be positive")
        state = self.get(session_id)
        profile = dict(self._memory.user(state.user_id).profile)
        total = sum(token_estimate(f"{k}: {v}") for k, v in profile.items())
        picked: list[TranscriptEntry] = []
        with self._locks[session_id]:
            snapshot = list(state.transcript)
        for entry in reversed(snapshot):
            cost = token_estimate(entry.content)
            if total + cost > token_budget:
                break
            picked.append(entry)
            total += cost
        picked.reverse()
        return ContextBundle(profile=profile, entries=picked, token_total=total)

    # -- persistence -------------------------------------------------------------

    def log_path(self, session_id: str) -> Path | None:
        if not self._log_dir:
            return None
        return self._log_dir / f"{session_id}.log.jsonl"

    def _write_log(self, state: SessionState, entry: TranscriptEntry) -> None:
        path = self.log_path(state.session_id)
        if not path:
            return
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry.to_record(), sort_keys=True) + "\n")

    def _restore_from_logs(self) -> None:
        for path in sorted(self._log_dir.glob("*.log.jsonl")):
            session_id = path.name[: -len(".log.jsonl")]
            entries = [
                TranscriptEntry.from_record(json.loads(line))
                for line in path.read_text(encoding="utf-8").splitlines()
                if line.strip()
            ]
            state = SessionState(
                session_id=session_id,
                user_id="restored",
                persona_id="restored",
                transcript=entries,
            )
            if entries:
                state.last_active_at = entries[-1].timestamp
            self._sessions[session_id] = state
            self._locks[session_id] = threading.Lock()
            self._deliverable_events[session_id] = {
                e.source_event_id for e in entries
                if e.kind == "deliverable" and e.source_event_id
            }
            # keep new ids from colliding with restored ones
            try:
                num = int(session_id.lstrip("s"))
                self._counter = max(self._counter, num)
            except ValueError:
                pass
