"""Slow track: dispatch to a specialized agent profile, build a dependency
graph of plan steps, execute with failure isolation, and synthesize the
deliverable.

Execution follows an iterative state-update protocol: every step completion
writes back into the shared task context and working memory and emits a
progress event. Ready steps with no dependency between them run concurrently
(up to the per-task cap); a failed step skips its descendants but never
aborts its siblings, and per-step timeouts guarantee liveness under stalls.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Generator, Iterable, Mapping, Sequence

from .config import EngineConfig
from .errors import DispatchError, EngineError, PlanValidationError
from .perception import RequestObject
from .routing import RoutingDecision, matched_intents
from .sim import Scheduler, Signal, SimTimeout
from .state import TraceItem, UserMemory
from .tools import (
    DelegationContract,
    ExecutionEnvelope,
    SubAgentResult,
    ToolFailure,
    ToolRegistry,
    ToolResult,
    delegate,
    invoke,
)
from .util import cosine, normalize_text, tf_vector, token_estimate


class AbandonedError(EngineError):
    """A clarification went unanswered past the turn limit."""


# -- agent profiles ----------------------------------------------------------------


@dataclass
class AgentProfile:
    profile_id: str
    description: str
    capability_tags: list[str] = field(default_factory=list)
    knowledge_refs: list[str] = field(default_factory=list)
    embedder_key: str = "tf-cosine-v1"


class ProfileRegistry:
    def __init__(self) -> None:
        self._profiles: dict[str, AgentProfile] = {}

    def add(self, profile: AgentProfile) -> None:
        if profile.profile_id in self._profiles:
            raise EngineError(f"profile already registered: {profile.profile_id!r}")
        self._profiles[profile.profile_id] = profile

    def get(self, profile_id: str) -> AgentProfile:
        try:
            return self._profiles[profile_id]
        except KeyError:
            raise DispatchError(f"unknown profile: {profile_id!r}") from None

    def all(self) -> list[AgentProfile]:
        return list(self._profiles.values())

    def ids(self) -> list[str]:
        return list(self._profiles)

    def __len__(self) -> int:
        return len(self._profiles)


def default_profiles() -> ProfileRegistry:
    registry = ProfileRegistry()
    registry.add(AgentProfile(
        "TravelPlanner",
        "Plans trips and vacations: builds a travel plan with flights, hotels, "
        "activities and dining for a destination itinerary",
        ["travel", "trip", "plan", "itinerary", "vacation", "flight", "hotel"],
    ))
    registry.add(AgentProfile(
        "MedicalExpert",
        "Medical consultation: symptoms, health advice and wellness guidance from a doctor",
        ["medical", "doctor", "symptom", "health", "diagnose", "consult"],
    ))
    registry.add(AgentProfile(
        "LegalAdvisor",
        "Legal advice: contracts, disputes and lawyer consultation",
        ["legal", "lawyer", "contract", "dispute", "advice"],
    ))
    registry.add(AgentProfile(
        "DataAnalyst",
        "Analyzes data, compares options and prepares analysis reports",
        ["analyze", "analysis", "data", "compare", "report"],
    ))
    registry.add(AgentProfile(
        "FoodExpert",
        "Restaurant and dining recommendations, cuisine shortlists",
        ["dining", "restaurant", "food", "cuisine", "eat"],
    ))
    registry.add(AgentProfile(
        "MediaCreator",
        "Creates illustrations and composes music sketches or a soundtrack",
        ["illustration", "draw", "image", "music", "song", "compose", "soundtrack"],
    ))
    registry.add(AgentProfile(
        "Generalist",
        "General assistant for anything else",
        ["general", "help"],
    ))
    return registry


def dispatch(query: str, registry: ProfileRegistry, fallback_id: str = "Generalist") -> AgentProfile:
    """Argmax of term-frequency cosine between the query and each profile.

    Zero overlap everywhere falls back to the configured generalist; the
    argmax is invariant under uniform scaling of any profile vector.
    """
    if len(registry) == 0:
        raise DispatchError("agent profile registry is empty")
    qvec = tf_vector(query)
    best: AgentProfile | None = None
    best_score = 0.0
    for profile in registry.all():
        text = f"{profile.description} {' '.join(profile.capability_tags)}"
        score = cosine(qvec, tf_vector(text))
        if score > best_score:
            best, best_score = profile, score
    if best is None:
        return registry.get(fallback_id)
    return best


# -- plans ---------------------------------------------------------------------------


@dataclass
class PlanStep:
    step_id: int
    tool: str
    args: dict[str, object]
    state: str = "pending"  # pending | running | done | failed | skipped
    result: ToolResult | SubAgentResult | None = None
    failure: ToolFailure | None = None
    started_at: float | None = None
    ended_at: float | None = None
    invoked_args: dict[str, object] | None = None

    def summary(self) -> str:
        if self.state == "done" and self.result is not None:
            return self.result.summary
        if self.state == "failed" and self.failure is not None:
            return f"failed ({self.failure.cause})"
        return self.state


@dataclass
class TaskGraph:
    task_id: str
    steps: list[PlanStep]
    edges: list[tuple[int, int]] = field(default_factory=list)

    def step(self, step_id: int) -> PlanStep:
        for s in self.steps:
            if s.step_id == step_id:
                return s
        raise KeyError(step_id)

    def parents(self, step_id: int) -> list[int]:
        return [a for a, b in self.edges if b == step_id]

    def children(self, step_id: int) -> list[int]:
        return [b for a, b in self.edges if a == step_id]

    def to_wire_plan(self) -> list[dict]:
        """Figure-style plan array: step / tool / args, bit-exact field names."""
        return [{"step": s.step_id, "tool": s.tool, "args": dict(s.args)} for s in self.steps]


def validate_graph(graph: TaskGraph, tool_ids: Iterable[str],
                   profile_ids: Iterable[str] = ()) -> list[int]:
    """Validate and topologically order a task graph (Kahn's algorithm).

    Raises PlanValidationError on an empty plan, duplicate/unknown step ids,
    unknown tools, or a cycle. Returns one valid topological order.
    """
    if not graph.steps:
        raise PlanValidationError("plan has no steps")
    ids = [s.step_id for s in graph.steps]
    if len(set(ids)) != len(ids):
        raise PlanValidationError(f"duplicate step ids in plan: {ids}")
    known_tools = set(tool_ids)
    known_profiles = set(profile_ids)
    for step in graph.steps:
        if step.tool.startswith("agent:"):
            if step.tool[len("agent:"):] not in known_profiles:
                raise PlanValidationError(f"unknown delegate in plan: {step.tool!r}")
        elif step.tool not in known_tools:
            raise PlanValidationError(f"unknown tool in plan: {step.tool!r}")
    id_set = set(ids)
    for a, b in graph.edges:
        if a not in id_set or b not in id_set:
            raise PlanValidationError(f"edge ({a}->{b}) references a missing step")
    indeg = {i: 0 for i in ids}
    for _, b in graph.edges:
        indeg[b] += 1
    frontier = [i for i in ids if indeg[i] == 0]
    order: list[int] = []
    while frontier:
        node = frontier.pop(0)
        order.append(node)
        for child in graph.children(node):
            indeg[child] -= 1
            if indeg[child] == 0:
                frontier.append(child)
    if len(order) != len(ids):
        raise PlanValidationError("plan graph contains a cycle")
    return order


# -- argument extraction (reference planner) ---------------------------------------------

_AFTER_TO = re.compile(r"\bto\s+([A-Z][a-zA-Z]+)")
_AFTER_IN = re.compile(r"\bin\s+([A-Z][a-zA-Z]+)")
_TICKER = re.compile(r"\b([A-Z]{2,6})\b")
_AFTER_FOR = re.compile(r"\bfor\s+(\w+)")
_CAPITALIZED = re.compile(r"\b([A-Z][a-zA-Z]+)\b")


def extract_destination(utterance: str) -> str:
    m = _AFTER_TO.search(utterance) or _AFTER_IN.search(utterance)
    if m:
        return m.group(1)
    caps = [c for c in _CAPITALIZED.findall(utterance[1:])]
    return caps[-1] if caps else "Anywhere"


def extract_city(utterance: str) -> str:
    m = _AFTER_IN.search(utterance) or _AFTER_TO.search(utterance)
    if m:
        return m.group(1)
    caps = _CAPITALIZED.findall(utterance[1:])
    return caps[-1] if caps else "here"


def _tool_args(tool: str, utterance: str) -> dict[str, object]:
    if tool == "weather":
        return {"city": extract_city(utterance)}
    if tool == "stock":
        m = _TICKER.search(utterance)
        return {"symbol": m.group(1) if m else "ACME"}
    if tool == "calendar":
        m = _AFTER_FOR.search(utterance)
        return {"date": m.group(1) if m else "today"}
    if tool == "search":
        return {"query": utterance}
    if tool == "flight_search":
        return {"dest": extract_destination(utterance)}
    if tool == "hotel_book":
        lower = utterance.lower()
        for kind in ("onsen", "ryokan", "suite", "hostel"):
            if kind in lower:
                return {"type": kind.title()}
        return {"type": "Standard"}
    if tool == "activity_search":
        return {"city": extract_destination(utterance)}
    if tool == "dining_search":
        return {"city": extract_destination(utterance)}
    if tool == "image_gen":
        return {"prompt": utterance}
    if tool == "music_gen":
        m = re.search(r"\b(\w+)\s+(?:song|track|soundtrack|playlist)", utterance.lower())
        return {"style": m.group(1) if m else "ambient"}
    return {"query": utterance}


def plan(task_id: str, request: RequestObject, profile: AgentProfile,
         decision: RoutingDecision, tool_registry: ToolRegistry,
         profile_ids: Sequence[str] = ()) -> TaskGraph:
    """Reference planner: declarative per-profile templates plus arg
    extraction from the utterance. A decision's plan skeleton, when present
    (model-backed router or tier-2 intent), takes precedence; independent
    steps share no edge so they can run concurrently."""
    utterance = request.utterance
    steps: list[PlanStep] = []
    edges: list[tuple[int, int]] = []

    skeleton = decision.plan_skeleton or []
    if skeleton:
        for item in skeleton:
            args = dict(item.args) or _tool_args(item.tool, utterance)
            steps.append(PlanStep(step_id=item.step, tool=item.tool, args=args))
        edges.extend(_ref_edges(steps))
    elif profile.profile_id == "TravelPlanner":
        dest = extract_destination(utterance)
        steps.append(PlanStep(1, "flight_search", {"dest": dest}))
        steps.append(PlanStep(2, "activity_search", {"city": dest}))
        next_id = 3
        lower = utterance.lower()
        if any(w in lower for w in ("hotel", "stay", "onsen", "ryokan")):
            steps.append(PlanStep(next_id, "hotel_book", _tool_args("hotel_book", utterance)))
            next_id += 1
        dining = PlanStep(next_id, "dining_search", {"city": dest})
        steps.append(dining)
        edges.append((1, dining.step_id))
        edges.append((2, dining.step_id))
    elif profile.profile_id == "FoodExpert":
        steps.append(PlanStep(1, "dining_search", {"city": extract_city(utterance)}))
    elif profile.profile_id == "MediaCreator":
        lower = utterance.lower()
        if any(w in lower for w in ("song", "music", "track", "soundtrack", "playlist")):
            steps.append(PlanStep(1, "music_gen", _tool_args("music_gen", utterance)))
        else:
            steps.append(PlanStep(1, "image_gen", {"prompt": utterance}))
    elif profile.profile_id == "MedicalExpert":
        steps.append(PlanStep(1, "search", {"query": f"medical guidance: {utterance}"}))
    elif profile.profile_id == "LegalAdvisor":
        steps.append(PlanStep(1, "search", {"query": f"legal overview: {utterance}"}))
    elif profile.profile_id == "DataAnalyst":
        steps.append(PlanStep(1, "search", {"query": f"analysis: {utterance}"}))
    else:
        intents = matched_intents(utterance)
        if intents:
            for i, (_, tool) in enumerate(intents, start=1):
                steps.append(PlanStep(i, tool, _tool_args(tool, utterance)))
        else:
            steps.append(PlanStep(1, "search", {"query": utterance}))

    # cover extra explicit tool intents not already planned (cross-domain turns)
    if not skeleton:
        planned = {s.tool for s in steps}
        next_id = max((s.step_id for s in steps), default=0) + 1
        for _, tool in matched_intents(utterance):
            if tool not in planned:
                steps.append(PlanStep(next_id, tool, _tool_args(tool, utterance)))
                planned.add(tool)
                next_id += 1

    graph = TaskGraph(task_id=task_id, steps=steps, edges=edges)
    validate_graph(graph, tool_registry.tool_ids(), profile_ids)
    return graph


_REF = re.compile(r"^@step:(\d+)$")


def _ref_edges(steps: Sequence[PlanStep]) -> list[tuple[int, int]]:
    """Steps consuming a prior step's output (an "@step:N" arg) gain an edge."""
    edges = []
    for step in steps:
        for value in step.args.values():
            if isinstance(value, str):
                m = _REF.match(value)
                if m:
                    edges.append((int(m.group(1)), step.step_id))
    return edges


# -- constraints -------------------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    kind: str  # dislike | require
    term: str


_DISLIKE = re.compile(r"\bdislikes?\s+([\w ]+)", re.IGNORECASE)
_REQUIRE = re.compile(r"\b(?:requires?|must have|only eats?)\s+([\w ]+)", re.IGNORECASE)
_IS_A = re.compile(r"\bis\s+(?:a|an)\s+(vegetarian|vegan)\b", re.IGNORECASE)


def derive_constraints(memory: UserMemory) -> list[Constraint]:
    """Dislike/require predicates distilled from profile and history facts."""
    constraints: list[Constraint] = []
    texts = [f"{k}: {v}" for k, v in memory.profile.items()]
    texts += [fact.statement for fact in memory.history]
    for text in texts:
        for m in _DISLIKE.finditer(text):
            constraints.append(Constraint("dislike", normalize_text(m.group(1))))
        for m in _REQUIRE.finditer(text):
            constraints.append(Constraint("require", normalize_text(m.group(1))))
        for m in _IS_A.finditer(text):
            constraints.append(Constraint("require", normalize_text(m.group(1))))
    seen: set[tuple[str, str]] = set()
    unique = []
    for c in constraints:
        key = (c.kind, c.term)
        if key not in seen:
            seen.add(key)
            unique.append(c)
    return unique


def apply_constraints(candidates: Sequence[Mapping], constraints: Sequence[Constraint]) -> list[dict]:
    """Drop candidates violating any constraint; preserve original order."""
    kept = []
    for cand in candidates:
        tags = [normalize_text(str(t)) for t in cand.get("tags", ())]
        ok = True
        for c in constraints:
            if c.kind == "dislike" and c.term in tags:
                ok = False
                break
            if c.kind == "require" and c.term not in tags:
                ok = False
                break
        if ok:
            kept.append(dict(cand))
    return kept


# -- execution ----------------------------------------------------------------------------


@dataclass
class TaskContext:
    task_id: str
    entries: dict[int, str] = field(default_factory=dict)
    constraints: list[Constraint] = field(default_factory=list)


@dataclass
class Clarification:
    step_id: int
    question: str
    signal: Signal
    asked_at: float
    unanswered_turns: int = 0
    answer: str | None = None


@dataclass
class TaskRun:
    task_id: str
    session_id: str
    profile_id: str
    request_text: str
    graph: TaskGraph
    context: TaskContext
    status: str = "pending"  # pending|running|suspended|done|partial|failed|abandoned
    started_at: float | None = None
    ended_at: float | None = None
    deliverable: str | None = None
    depth: int = 0
    causal_counter: int = 0
    clarification: Clarification | None = None
    done_signal: Signal | None = None

    def next_causal_seq(self) -> int:
        self.causal_counter += 1
        return self.causal_counter

    def terminal(self) -> bool:
        return self.status in ("done", "partial", "failed", "abandoned")

    def invocations(self) -> list[tuple[str, dict]]:
        out = []
        for step in self.graph.steps:
            if step.invoked_args is not None:
                out.append((step.tool, dict(step.invoked_args)))
        return out

    def to_trace(self) -> dict:
        return {
            "task_id": self.task_id,
            "session_id": self.session_id,
            "profile_id": self.profile_id,
            "request": self.request_text,
            "status": self.status,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "constraints": [{"kind": c.kind, "term": c.term} for c in self.context.constraints],
            "edges": [list(e) for e in self.graph.edges],
            "steps": [
                {
                    "step_id": s.step_id,
                    "tool": s.tool,
                    "args": dict(s.args),
                    "invoked_args": dict(s.invoked_args) if s.invoked_args else None,
                    "state": s.state,
                    "started_at": s.started_at,
                    "ended_at": s.ended_at,
                    "summary": s.summary(),
                }
                for s in self.graph.steps
            ],
        }


class TaskExecutor:
    """Drives one task graph on the scheduler.

    emit_event(kind, payload) is the bus hook; on_trace_item feeds working
    memory; run_subtask spawns a nested slow-track task for delegation steps.
    """

    def __init__(self, sched: Scheduler, config: EngineConfig, tools: ToolRegistry,
                 rng, task: TaskRun,
                 emit_event: Callable[[str, object], None],
                 on_trace_item: Callable[[TraceItem], None] | None = None,
                 run_subtask: Callable[[str, str, int], Signal] | None = None,
                 profile_ids: Sequence[str] = (),
                 on_terminal: Callable[[TaskRun], None] | None = None,
                 context_slice: tuple[str, ...] = ()):
        self._sched = sched
        self._config = config
        self._tools = tools
        self._rng = rng
        self.task = task
        self._emit = emit_event
        self._on_trace = on_trace_item
        self._run_subtask = run_subtask
        self._profile_ids = list(profile_ids)
        self._on_terminal = on_terminal
        self._context_slice = context_slice
        self._running = 0
        self._ready: list[int] = []
        self._envelope_counter = 0
        self._abandoned = False

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        task = self.task
        task.status = "running"
        task.started_at = self._sched.now
        for step in task.graph.steps:
            if not task.graph.parents(step.step_id):
                self._ready.append(step.step_id)
        self._pump()

    def _pump(self) -> None:
        while self._ready and self._running < self._config.task_concurrency:
            step_id = self._ready.pop(0)
            self._start_step(self.task.graph.step(step_id))
        if self._running == 0 and not self._ready and not self.task.terminal():
            if all(s.state in ("done", "failed", "skipped") for s in self.task.graph.steps):
                self._finish()

    def _start_step(self, step: PlanStep) -> None:
        step.state = "running"
        step.started_at = self._sched.now
        self._running += 1
        proc = self._sched.spawn(self._step_proc(step), name=f"{self.task.task_id}-s{step.step_id}")
        proc.on_done(lambda sig, s=step: self._step_done(s, sig))

    # -- step execution -----------------------------------------------------------

    def _materialize_args(self, step: PlanStep) -> dict[str, object]:
        """Bind "@step:N" references to the parent step's result value."""
        args = {}
        for key, value in step.args.items():
            if isinstance(value, str):
                m = _REF.match(value)
                if m:
                    parent = self.task.graph.step(int(m.group(1)))
                    args[key] = parent.summary()
                    continue
            args[key] = value
        return args

    def _invoke_once(self, step: PlanStep, args: dict) -> Generator:
        step.invoked_args = dict(args)
        if step.tool.startswith("agent:"):
            delegate_id = step.tool[len("agent:"):]
            contract = DelegationContract(
                contract_id=f"{self.task.task_id}-s{step.step_id}-c",
                delegate_profile_id=delegate_id,
                task_statement=str(args.get("statement") or args.get("query")
                                   or self.task.request_text),
                expected_result_schema=dict(args.get("expected_schema", {})),
                deadline_ms=self._config.delegation_deadline_ms,
            )
            result = yield from delegate(
                contract, self._profile_ids, self._sched,
                self._run_subtask, self.task.depth, self._config.delegation_depth_cap,
            )
            return result
        self._envelope_counter += 1
        envelope = ExecutionEnvelope(
            envelope_id=f"{self.task.task_id}-s{step.step_id}-e{self._envelope_counter}",
            tool_id=step.tool,
            args=args,
            context_slice=self._context_slice,
            issued_at=self._sched.now,
        )
        invoke_task = self._sched.spawn(invoke(self._tools, envelope, self._rng, self._sched))
        try:
            result = yield self._sched.guard(invoke_task, self._config.step_timeout_ms)
        except SimTimeout:
            return ToolFailure(step.tool, cause="timeout",
                               detail=f"step exceeded {self._config.step_timeout_ms} ms")
        return result

    def _step_proc(self, step: PlanStep) -> Generator:
        args = self._materialize_args(step)
        step.args = args
        result = yield from self._invoke_once(step, args)
        if isinstance(result, ToolResult) and isinstance(result.value.get("candidates"), list):
            result = yield from self._resolve_candidates(step, args, result)
        return result

    def _resolve_candidates(self, step: PlanStep, args: dict, result: ToolResult) -> Generator:
        """Constraint fusion plus the single allowed clarification round."""
        candidates = list(result.value["candidates"])
        filtered = apply_constraints(candidates, self.task.context.constraints)
        question = self._ambiguity(step, filtered)
        if question is not None:
            answer = yield from self._await_clarification(step, question)
            args = {**args, "clarification_answer": answer}
            step.args = args
            retry = yield from self._invoke_once(step, args)
            if not isinstance(retry, ToolResult):
                return retry
            result = retry
            candidates = list(result.value.get("candidates", ()))
            filtered = apply_constraints(candidates, self.task.context.constraints)
        if not filtered:
            return ToolFailure(step.tool, cause="no-viable-candidate",
                               detail="every candidate violated a constraint")
        chosen = filtered[0]
        name = str(chosen.get("name", chosen))
        result.value["selected"] = name
        result.value["filtered_candidates"] = filtered
        result.summary = name
        return result

    def _ambiguity(self, step: PlanStep, filtered: list[dict]) -> str | None:
        if self.task.clarification is not None:  # one round per task
            return None
        if not filtered:
            return (
                "None of the options fit your stated preferences — is there an "
                "alternative you would accept?"
            )
        if len(filtered) > self._config.clarify_candidate_threshold:
            scores = sorted((float(c.get("score", 0.0)) for c in filtered), reverse=True)
            if len(scores) >= 2 and scores[0] - scores[1] < self._config.clarify_score_margin:
                return (
                    f"I found {len(filtered)} similar matches — could you share a "
                    "distinguishing detail so I pick the right one?"
                )
        return None

    def _await_clarification(self, step: PlanStep, question: str) -> Generator:
        signal = self._sched.signal(f"clarify:{self.task.task_id}:{step.step_id}")
        self.task.clarification = Clarification(
            step_id=step.step_id, question=question, signal=signal,
            asked_at=self._sched.now,
        )
        self.task.status = "suspended"
        self._emit("clarification", question)
        answer = yield signal  # AbandonedError propagates into the step
        self.task.status = "running"
        self.task.clarification.answer = answer
        return answer

    # -- clarification control (engine-facing) -------------------------------------

    def answer_clarification(self, text: str) -> bool:
        clar = self.task.clarification
        if clar is None or clar.signal.done:
            return False
        clar.signal.succeed(text)
        return True

    def note_unanswered_turn(self) -> None:
        clar = self.task.clarification
        if clar is None or clar.signal.done:
            return
        clar.unanswered_turns += 1
        if clar.unanswered_turns >= self._config.clarify_abandon_turns:
            clar.signal.fail(AbandonedError(
                f"clarification unanswered for {clar.unanswered_turns} turns"
            ))

    # -- completion --------------------------------------------------------------------

    def _step_done(self, step: PlanStep, sig: Signal) -> None:
        self._running -= 1
        step.ended_at = self._sched.now
        if sig.error is not None:
            cause = "abandoned" if isinstance(sig.error, AbandonedError) else "tool-error"
            step.state = "failed"
            step.failure = ToolFailure(step.tool, cause=cause, detail=str(sig.error))
            if isinstance(sig.error, AbandonedError):
                self._abandoned = True
        elif isinstance(sig.value, ToolFailure):
            step.state = "failed"
            step.failure = sig.value
        else:
            step.state = "done"
            step.result = sig.value
        # iterative state-update protocol: write back, then notify
        summary = step.summary()
        self.task.context.entries[step.step_id] = summary
        if self._on_trace:
            payload = f"{step.tool}[{step.state}]: {summary}"
            self._on_trace(TraceItem(
                task_id=self.task.task_id, step_id=str(step.step_id),
                payload=payload, token_estimate=token_estimate(payload),
            ))
        self._emit("progress", {
            "step": step.step_id, "tool": step.tool, "state": step.state,
            "summary": summary,
        })
        if step.state == "done" and step.result is not None \
                and getattr(step.result, "artifact", None):
            self._emit("artifact", f"{step.tool} produced {step.result.artifact}")
        if step.state == "failed":
            self._skip_descendants(step.step_id)
        for child in self.task.graph.children(step.step_id):
            child_step = self.task.graph.step(child)
            if child_step.state == "pending" and all(
                self.task.graph.step(p).state == "done"
                for p in self.task.graph.parents(child)
            ):
                self._ready.append(child)
        self._pump()

    def _skip_descendants(self, step_id: int) -> None:
        for child in self.task.graph.children(step_id):
            child_step = self.task.graph.step(child)
            if child_step.state == "pending":
                child_step.state = "skipped"
                child_step.started_at = child_step.ended_at = self._sched.now
                self.task.context.entries[child] = "skipped"
                self._emit("progress", {
                    "step": child, "tool": child_step.tool, "state": "skipped",
                    "summary": "skipped (upstream failure)",
                })
                self._skip_descendants(child)

    def _finish(self) -> None:
        task = self.task
        task.ended_at = self._sched.now
        states = [s.state for s in task.graph.steps]
        if self._abandoned:
            task.status = "abandoned"
        elif all(s == "done" for s in states):
            task.status = "done"
        elif any(s == "done" for s in states):
            task.status = "partial"
        else:
            task.status = "failed"
        task.deliverable = generate(task)
        kind = "final" if task.status in ("done", "partial") else "failure"
        self._emit(kind, task.deliverable)
        if task.done_signal is not None and not task.done_signal.done:
            task.done_signal.succeed(_subtask_value(task))
        if self._on_terminal:
            self._on_terminal(task)


def _subtask_value(task: TaskRun) -> dict:
    """Result mapping returned to a delegating parent (A2A result return)."""
    value: dict = {"summary": task.deliverable or "", "status": task.status}
    for step in task.graph.steps:
        if step.state == "done" and isinstance(step.result, ToolResult):
            for key, item in step.result.value.items():
                value.setdefault(key, item)
    return value


# -- deliverable synthesis -------------------------------------------------------------


_STATUS_HEADERS = {
    "done": "Here's what I put together:",
    "partial": "I finished part of your request; some steps did not complete:",
    "failed": "I couldn't complete your request:",
    "abandoned": "I had to set your request aside (my question went unanswered):",
}


def generate(task: TaskRun, modality_hint: str = "text") -> str:
    """Deterministic structured summary of the trace, in plan order.

    Failures are reported explicitly; pure synthesis — the generator never
    calls tools.
    """
    lines = [_STATUS_HEADERS.get(task.status, _STATUS_HEADERS["done"])]
    for step in task.graph.steps:
        label = step.tool.replace("agent:", "specialist ")
        if step.state == "done":
            lines.append(f"- {label}: {step.summary()}")
        elif step.state == "failed":
            cause = step.failure.cause if step.failure else "error"
            lines.append(f"- {label}: failed ({cause})")
        elif step.state == "skipped":
            lines.append(f"- {label}: skipped (upstream failure)")
        else:
            lines.append(f"- {label}: {step.state}")
    if task.context.constraints:
        noted = ", ".join(f"{c.kind}s {c.term}" for c in task.context.constraints)
        lines.append(f"(Options were filtered using your preferences: {noted}.)")
    if modality_hint == "visual":
        artifacts = [
            step.result.artifact for step in task.graph.steps
            if step.state == "done" and step.result is not None
            and getattr(step.result, "artifact", None)
        ]
        if artifacts:
            lines.append("Artifacts: " + ", ".join(artifacts))
    return "\n".join(lines)
