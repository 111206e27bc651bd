"""Fast track: the immediate user-facing response under the TTFT budget.

Direct persona-grounded replies for tier-1 turns, semantic bridges for
tier-2/3, and a hard-deadline watchdog that emits a fallback acknowledgement
at exactly the budget tick when the backend is late (the late text is then
integrated as a follow-up entry).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Generator

from .config import EngineConfig
from .perception import RequestObject
from .routing import RoutingDecision
from .sim import Scheduler, Signal, Task
from .state import AgentMemory, ContextBundle, SessionStore

FALLBACK_TEXT = "One moment while I pull that together..."


@dataclass
class ResponsePlan:
    kind: str  # direct | bridge | fallback-ack
    text: str
    deadline_ms: float
    produced_at: float


class TemplateResponder:
    """Reference backend: deterministic templates over persona traits and
    retrieved profile facts, with a fixed configured latency."""

    def __init__(self, latency_ms: float = 10.0):
        self.latency_ms = latency_ms

    def generate(self, request: RequestObject, context: ContextBundle,
                 persona: AgentMemory) -> tuple[str, float]:
        voice = persona.traits[0] if persona.traits else "friendly"
        fact = next(iter(context.profile.items()), None)
        lower = request.utterance.lower()
        weary = any(w in lower for w in ("exhausted", "tired", "drained", "rough day"))
        if fact is not None:
            key, value = fact
            if weary:
                text = (
                    f"That sounds draining — I'm here for you. Since {key.lower()} "
                    f"usually means {value.lower()} for you, maybe a little {value.lower()} "
                    "would help you recharge?"
                )
            else:
                text = (
                    f"Happy to chat! I remember your {key.lower()} is {value.lower()} — "
                    "tell me more about what's on your mind."
                )
        elif weary:
            text = "That sounds draining — I'm here for you. Want to talk it through?"
        else:
            text = f"Hello! Always {voice} and happy to help — what's on your mind?"
        return text, self.latency_ms


class ScriptedResponder:
    """Test backend with scripted text/latency/errors per call."""

    def __init__(self, script: list[tuple[str, float]] | None = None,
                 error: Exception | None = None):
        self.script = list(script or [])
        self.error = error
        self.calls = 0

    def generate(self, request, context, persona) -> tuple[str, float]:
        self.calls += 1
        if self.error is not None:
            raise self.error
        if self.script:
            return self.script.pop(0)
        return f"reply to: {request.utterance}", 10.0


class HttpResponder:
    """Optional external text backend sharing the same latency contract."""

    def __init__(self, url: str, client=None, latency_ms: float = 0.0):
        import httpx

        self._url = url
        self._client = client or httpx.Client(timeout=30.0)
        self.latency_ms = latency_ms

    def generate(self, request, context, persona) -> tuple[str, float]:
        resp = self._client.post(self._url, json={
            "utterance": request.utterance,
            "profile": context.profile,
            "persona": persona.persona,
        })
        resp.raise_for_status()
        return str(resp.json()["text"]), self.latency_ms


def respond_direct(request: RequestObject, context: ContextBundle, persona: AgentMemory,
                   backend, deadline_ms: float) -> Generator:
    """Process producing the tier-1 direct response through the backend."""
    text, latency = backend.generate(request, context, persona)
    if latency > 0:
        yield latency
    return ResponsePlan(kind="direct", text=text, deadline_ms=deadline_ms, produced_at=0.0)


_DOMAIN_WORDS = {
    "weather": "weather reports",
    "stock": "market quotes",
    "calendar": "calendar",
    "search": "search results",
}


def bridge(request: RequestObject, decision: RoutingDecision,
           deadline_ms: float = 500.0) -> ResponsePlan:
    """Semantic bridging acknowledgement, emitted before any slow-track work."""
    if decision.mode == "tool":
        tool = decision.plan_skeleton[0].tool if decision.plan_skeleton else "search"
        domain = _DOMAIN_WORDS.get(tool, f"{tool} results")
        text = f"I will check the latest {domain} for you — just a moment."
    else:
        topic = _topic_of(request.utterance)
        text = (
            f"I've received your request — I'll work on {topic} in the background "
            "and report back as soon as it's ready."
        )
    return ResponsePlan(kind="bridge", text=text, deadline_ms=deadline_ms, produced_at=0.0)


def _topic_of(utterance: str) -> str:
    lower = utterance.lower()
    for cue, topic in (
        ("trip", "the trip"),
        ("travel", "the travel plan"),
        ("itinerary", "the itinerary"),
        ("vacation", "the vacation plan"),
        ("medical", "the medical consultation"),
        ("symptom", "the medical consultation"),
        ("legal", "the legal review"),
        ("contract", "the contract review"),
    ):
        if cue in lower:
            return topic
    return "your request"


class BudgetEnforcer:
    """Per-turn deadline race: backend result vs the budget timer.

    Whatever wins appends the turn's first assistant entry; a late backend
    result is appended afterwards as a follow-up. The enforcer is also how
    bridges reach the transcript, so every turn gets exactly one first entry.
    """

    def __init__(self, sched: Scheduler, store: SessionStore, session_id: str,
                 turn_start: float, config: EngineConfig,
                 on_first_entry: Callable[[int, float], None] | None = None):
        self._sched = sched
        self._store = store
        self._session_id = session_id
        self._turn_start = turn_start
        self._budget = config.ttft_budget_ms
        self._on_first = on_first_entry
        self.first_seq: int | None = None
        self.fallback_fired = False
        self._watchdog = sched.call_at(turn_start + self._budget, self.fire_fallback)

    def _record_first(self, seq: int) -> None:
        if self.first_seq is None:
            self.first_seq = seq
            self._sched.cancel(self._watchdog)
            if self._on_first:
                self._on_first(seq, self._sched.now)

    def fire_fallback(self) -> None:
        if self.first_seq is not None:
            return
        self.fallback_fired = True
        seq = self._store.append(self._session_id, "assistant", "turn", FALLBACK_TEXT)
        self._record_first(seq)

    def cancel(self) -> None:
        self._sched.cancel(self._watchdog)

    def submit(self, plan: ResponsePlan) -> int:
        """Append a produced response; first entry wins the race, later ones
        are follow-ups."""
        plan.produced_at = self._sched.now
        kind = "bridge" if plan.kind == "bridge" else "turn"
        seq = self._store.append(self._session_id, "assistant", kind, plan.text)
        self._record_first(seq)
        return seq

    def attach_backend(self, task: Task, on_error_text: str = FALLBACK_TEXT) -> None:
        """Wire a direct-response process into the race. Backend errors before
        the deadline trigger the fallback immediately."""

        def _done(sig: Signal) -> None:
            if sig.error is not None:
                self.fire_fallback()
                return
            self.submit(sig.value)

        task.on_done(_done)

    def within_budget(self, entry_time: float) -> bool:
        return entry_time - self._turn_start <= self._budget
