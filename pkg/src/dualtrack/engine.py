"""The orchestration engine: one turn in, a fast-track response within the
budget, and (for tier-2/3) an asynchronous slow-track task whose state-update
events are integrated back into the same transcript.

The engine is clock-agnostic: driven by a virtual scheduler it is an exact,
replayable simulation; driven by the wall-clock pump it is the live service.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .bus import Integrator, SessionBus, StateUpdateEvent
from .config import EngineConfig
from .errors import DelegationError, PlanValidationError
from .fast_track import BudgetEnforcer, ResponsePlan, TemplateResponder, bridge, respond_direct
from .perception import ModalityPayload, PerceptionGateway, RequestObject
from .routing import RoutingDecision, RuleClassifier, serialize_decision
from .sim import Scheduler, Signal
from .slow_track import (
    PlanStep,
    TaskContext,
    TaskGraph,
    TaskExecutor,
    TaskRun,
    default_profiles,
    derive_constraints,
    dispatch,
    plan as build_plan,
)
from .state import AgentMemory, MemoryStore, SessionStore, TraceItem
from .tools import ToolRegistry, build_builtin_registry
from .util import derive_seed, token_estimate

ACK_TEXT = "Got it — picking your earlier request back up with that detail."


@dataclass
class TurnRecord:
    """Everything the harness needs to score one turn."""

    turn_id: str
    session_id: str
    turn_start: float
    utterance: str = ""
    decision: RoutingDecision | None = None
    routing_signal: Signal | None = None
    perception_ms: float = 0.0
    first_assistant_seq: int | None = None
    first_assistant_at: float | None = None
    fallback_fired: bool = False
    e2e_done_at: float | None = None
    task_id: str | None = None
    answered_clarification: bool = False

    def ttft_ms(self) -> float | None:
        if self.first_assistant_at is None:
            return None
        return self.first_assistant_at - self.turn_start

    def e2e_ms(self) -> float | None:
        if self.e2e_done_at is None:
            return None
        return self.e2e_done_at - self.turn_start


def build_responder(config: EngineConfig):
    if config.responder_backend == "http":
        from .fast_track import HttpResponder

        return HttpResponder(config.responder_url, latency_ms=config.responder_latency_ms)
    return TemplateResponder(config.responder_latency_ms)


def build_classifier(config: EngineConfig, profiles):
    if config.classifier_backend == "http":
        import httpx

        from .routing import BackedClassifier

        client = httpx.Client(timeout=30.0)

        def backend(utterance: str) -> str:
            resp = client.post(config.classifier_url, json={"utterance": utterance})
            resp.raise_for_status()
            return resp.text

        return BackedClassifier(backend)
    return RuleClassifier(profiles.all(), generalist=config.generalist_profile)


def build_perceptor(config: EngineConfig):
    if config.perceptor_url:
        from .perception import HttpPerceptor

        return HttpPerceptor(config.perceptor_url)
    return None


def default_personas() -> list[AgentMemory]:
    return [
        AgentMemory(
            persona_id="companion",
            persona="A warm, attentive daily companion who remembers what matters to you.",
            traits=["empathetic", "professional", "helpful"],
            knowledge_base=[
                {"doc_id": "kb-smalltalk", "text": "Light conversation topics and check-in prompts"},
                {"doc_id": "kb-wellness", "text": "Rest, recharge and recovery suggestions"},
            ],
        ),
        AgentMemory(
            persona_id="concierge",
            persona="A brisk, precise service concierge focused on getting things done.",
            traits=["precise", "efficient", "courteous"],
        ),
    ]


class Engine:
    """Session lifecycle, turn intake, and dual-track orchestration."""

    def __init__(self, config: EngineConfig, sched: Scheduler,
                 memory: MemoryStore | None = None,
                 tools: ToolRegistry | None = None,
                 profiles=None, classifier=None, responder=None,
                 perceptor=None):
        self.config = config
        self.sched = sched
        self.memory = memory or MemoryStore()
        if memory is None:
            for persona in default_personas():
                self.memory.register_persona(persona)
        self.store = SessionStore(self.memory, lambda: sched.now,
                                  config.log_dir or None)
        self.bus = SessionBus(config.log_dir or None)
        self.integrator = Integrator(
            self.store,
            surface_artifacts=config.surface_artifacts,
            on_terminal=self._on_task_terminal,
            on_plan_update=self._on_plan_event,
        )
        self.tools = tools or build_builtin_registry(
            latency_profile=config.latency_profile,
            heavy_mu=config.heavy_lognormal_mu,
            heavy_sigma=config.heavy_lognormal_sigma,
            failure_rate=config.tool_failure_rate,
        )
        self.profiles = profiles or default_profiles()
        self.classifier = classifier or build_classifier(config, self.profiles)
        self.responder = responder or build_responder(config)
        self.perception = PerceptionGateway(config, perceptor or build_perceptor(config))
        self._tool_rng = random.Random(derive_seed(config.seed, "tools"))

        self.tasks: dict[str, TaskRun] = {}
        self.executors: dict[str, TaskExecutor] = {}
        self._session_tasks: dict[str, list[str]] = {}
        self._turns: dict[str, list[TurnRecord]] = {}
        self._live_pipelines: dict[str, int] = {}
        self._pending_clarifications: dict[str, list[str]] = {}
        self._task_to_turn: dict[str, TurnRecord] = {}
        self._client_turn_index: dict[tuple[str, str], TurnRecord] = {}
        self._plan_listeners: dict[str, list] = {}
        self._task_counter = 0
        self._turn_counter = 0
        self._live_subtasks = 0

    # -- sessions ---------------------------------------------------------------

    def open_session(self, user_id: str, persona_id: str):
        state = self.store.create_session(user_id, persona_id)
        sid = state.session_id
        self.bus.register_session(sid)
        self.bus.subscribe(sid).on_event(self.integrator.integrate)
        self._session_tasks[sid] = []
        self._turns[sid] = []
        self._live_pipelines[sid] = 0
        self._pending_clarifications[sid] = []
        self._plan_listeners[sid] = []
        return state

    def seed_user_memory(self, user_id: str, profile: dict[str, str] | None = None,
                         history: Iterable[str] = ()) -> None:
        self.memory.seed_user(user_id, profile, history, created_at=self.sched.now)

    # -- turn intake ---------------------------------------------------------------

    def submit_turn(self, session_id: str, payloads: Sequence[ModalityPayload] | None = None,
                    text: str | None = None, client_turn_id: str | None = None) -> TurnRecord:
        """Start one turn. Returns immediately with the turn record; the
        routing decision resolves on its signal. Duplicate client_turn_ids
        replay the original record without re-execution."""
        session = self.store.get(session_id)
        self.memory.persona(session.persona_id)  # restored placeholders reject writes
        if client_turn_id is not None:
            existing = self._client_turn_index.get((session_id, client_turn_id))
            if existing is not None:
                return existing
        # sessions restored from logs never passed through open_session
        self._turns.setdefault(session_id, [])
        self._live_pipelines.setdefault(session_id, 0)
        self._pending_clarifications.setdefault(session_id, [])
        self._session_tasks.setdefault(session_id, [])
        if payloads is None:
            if text is None:
                raise ValueError("either payloads or text is required")
            payloads = [ModalityPayload(modality="text", data=text)]
        self._turn_counter += 1
        rec = TurnRecord(
            turn_id=f"turn{self._turn_counter:05d}",
            session_id=session_id,
            turn_start=self.sched.now,
        )
        rec.routing_signal = self.sched.signal(f"routing:{rec.turn_id}")
        if client_turn_id is not None:
            self._client_turn_index[(session_id, client_turn_id)] = rec
        self._turns[session_id].append(rec)
        enforcer = BudgetEnforcer(
            self.sched, self.store, session_id, rec.turn_start, self.config,
            on_first_entry=lambda seq, at: self._note_first_entry(rec, seq, at),
        )
        self._live_pipelines[session_id] += 1
        pipeline = self.sched.spawn(
            self._turn_pipeline(session, rec, list(payloads), enforcer),
            name=rec.turn_id,
        )
        pipeline.on_done(
            lambda sig, sid=session_id: self._pipeline_done(sid, sig, rec, enforcer)
        )
        return rec

    def _note_first_entry(self, rec: TurnRecord, seq: int, at: float) -> None:
        if rec.first_assistant_seq is None:
            rec.first_assistant_seq = seq
            rec.first_assistant_at = at

    def _pipeline_done(self, session_id: str, sig: Signal, rec: TurnRecord,
                       enforcer: BudgetEnforcer) -> None:
        self._live_pipelines[session_id] -= 1
        if sig.error is not None:
            if rec.routing_signal and not rec.routing_signal.done:
                rec.routing_signal.fail(sig.error)
            if rec.first_assistant_seq is None:
                enforcer.cancel()  # invalid turn: no fallback for a turn that never landed

    def _turn_pipeline(self, session, rec: TurnRecord, payloads, enforcer: BudgetEnforcer):
        rec.perception_ms = self.perception.turn_latency_ms(payloads)
        if rec.perception_ms > 0:
            yield rec.perception_ms
        request = self.perception.normalize(payloads, session.session_id,
                                            now_ms=rec.turn_start)
        rec.utterance = request.utterance
        self.store.append(session.session_id, "user", "turn", request.utterance)

        if self.config.classifier_latency_ms > 0:
            yield self.config.classifier_latency_ms
        context = self.store.read_context(session.session_id, token_budget=400)
        decision = self.classifier.classify(request, context)
        rec.decision = decision
        rec.routing_signal.succeed(decision)
        self._record_decision(session.session_id, rec, decision)

        pending = self._pending_clarifications[session.session_id]
        if decision.mode == "chat" and pending:
            self._answer_clarification(session.session_id, rec, request.utterance, enforcer)
            return None
        self._age_clarifications(session.session_id)

        if decision.mode == "chat":
            persona = self.memory.persona(session.persona_id)
            backend_task = self.sched.spawn(
                respond_direct(request, context, persona, self.responder,
                               self.config.ttft_budget_ms)
            )
            try:
                plan_out: ResponsePlan = yield backend_task
            except Exception:
                enforcer.fire_fallback()
                rec.e2e_done_at = self.sched.now
                rec.fallback_fired = enforcer.fallback_fired
                return None
            enforcer.submit(plan_out)
            rec.e2e_done_at = self.sched.now
            rec.fallback_fired = enforcer.fallback_fired
            return None

        # tier-2/3: bridge first, then hand off to the slow track
        enforcer.submit(bridge(request, decision, self.config.ttft_budget_ms))
        rec.fallback_fired = enforcer.fallback_fired
        self._spawn_task(session, rec, request, decision)
        return None

    def _record_decision(self, session_id: str, rec: TurnRecord,
                         decision: RoutingDecision) -> None:
        payload = serialize_decision(decision)
        self.store.get(session_id).working_memory.append(TraceItem(
            task_id="routing", step_id=rec.turn_id, payload=payload,
            token_estimate=token_estimate(payload),
        ))

    # -- clarification plumbing ------------------------------------------------------

    def _answer_clarification(self, session_id: str, rec: TurnRecord, text: str,
                              enforcer: BudgetEnforcer) -> None:
        pending = self._pending_clarifications[session_id]
        rec.answered_clarification = True
        enforcer.submit(ResponsePlan(kind="bridge", text=ACK_TEXT,
                                     deadline_ms=self.config.ttft_budget_ms,
                                     produced_at=0.0))
        rec.e2e_done_at = self.sched.now
        while pending:
            task_id = pending.pop(0)
            executor = self.executors.get(task_id)
            if executor is not None and executor.answer_clarification(text):
                break
        for task_id in list(pending):
            executor = self.executors.get(task_id)
            if executor is not None:
                executor.note_unanswered_turn()

    def _age_clarifications(self, session_id: str) -> None:
        for task_id in list(self._pending_clarifications[session_id]):
            executor = self.executors.get(task_id)
            if executor is not None:
                executor.note_unanswered_turn()

    # -- slow-track wiring ----------------------------------------------------------------

    def _spawn_task(self, session, rec: TurnRecord | None, request: RequestObject,
                    decision: RoutingDecision, depth: int = 0,
                    done_signal: Signal | None = None) -> TaskRun:
        self._task_counter += 1
        task_id = f"t{self._task_counter:05d}"
        if decision.mode == "agent":
            profile = self.profiles.get(decision.routing_target) if decision.routing_target \
                else dispatch(request.utterance, self.profiles, self.config.generalist_profile)
        else:
            profile = self.profiles.get(self.config.generalist_profile)
        constraints = derive_constraints(self.memory.user(session.user_id))
        context = TaskContext(task_id=task_id, constraints=constraints)
        try:
            graph = build_plan(task_id, request, profile, decision, self.tools,
                               self.profiles.ids())
        except PlanValidationError as exc:
            # fail fast: user receives a failure deliverable for this task
            return self._fail_unplannable(session, rec, task_id, profile.profile_id,
                                          request, context, exc, depth, done_signal)
        task = TaskRun(
            task_id=task_id, session_id=session.session_id,
            profile_id=profile.profile_id, request_text=request.utterance,
            graph=graph, context=context, depth=depth, done_signal=done_signal,
        )
        self._register_task(session, rec, task)
        executor = TaskExecutor(
            self.sched, self.config, self.tools, self._tool_rng, task,
            emit_event=self._emitter_for(task),
            on_trace_item=lambda item: self.store.get(session.session_id)
            .working_memory.append(item),
            run_subtask=self._run_subtask_for(session),
            profile_ids=self.profiles.ids(),
            on_terminal=self._executor_terminal,
            context_slice=tuple(
                f"{k}: {v}" for k, v in self.memory.user(session.user_id).profile.items()
            ),
        )
        self.executors[task_id] = executor
        executor.start()
        return task

    def _register_task(self, session, rec: TurnRecord | None, task: TaskRun) -> None:
        self.tasks[task.task_id] = task
        if task.depth > 0:
            self._live_subtasks += 1
        self._session_tasks[session.session_id].append(task.task_id)
        if task.depth == 0:
            session.pending_tasks.add(task.task_id)
            self.bus.register_task(session.session_id, task.task_id)
            if rec is not None:
                rec.task_id = task.task_id
                self._task_to_turn[task.task_id] = rec

    def _fail_unplannable(self, session, rec, task_id, profile_id, request, context,
                          exc, depth, done_signal) -> TaskRun:
        graph = TaskGraph(task_id=task_id, steps=[PlanStep(1, "search", {"query": request.utterance})])
        task = TaskRun(
            task_id=task_id, session_id=session.session_id, profile_id=profile_id,
            request_text=request.utterance, graph=graph, context=context,
            status="failed", depth=depth, done_signal=done_signal,
        )
        task.started_at = task.ended_at = self.sched.now
        task.deliverable = f"I couldn't plan that request: {exc}"
        self._register_task(session, rec, task)
        if depth == 0:
            emit = self._emitter_for(task)
            emit("failure", task.deliverable)
        else:
            self._live_subtasks -= 1
            if done_signal is not None:
                done_signal.succeed({"summary": task.deliverable, "status": "failed"})
        return task

    def _emitter_for(self, task: TaskRun):
        def emit(kind: str, payload) -> None:
            if task.depth > 0:
                return  # nested tasks report through their contract, not the bus
            seq = task.next_causal_seq()
            event = StateUpdateEvent(
                event_id=f"{task.task_id}-e{seq}",
                session_id=task.session_id,
                task_id=task.task_id,
                kind=kind,
                payload=payload,
                causal_seq=seq,
                emitted_at=self.sched.now,
            )
            if kind == "clarification":
                self._pending_clarifications[task.session_id].append(task.task_id)
            self.bus.emit(event)

        return emit

    def _run_subtask_for(self, session):
        def run_subtask(profile_id: str, statement: str, depth: int) -> Signal:
            if self._live_subtasks >= self.config.max_live_subtasks:
                raise DelegationError(
                    f"live sub-task cap {self.config.max_live_subtasks} reached"
                )
            signal = self.sched.signal(f"subtask:{profile_id}")
            sub_request = RequestObject(session_id=session.session_id, utterance=statement)
            sub_decision = RoutingDecision(
                thought=f"delegated to {profile_id}", mode="agent",
                routing_target=profile_id,
            )
            self._spawn_task(session, None, sub_request, sub_decision,
                             depth=depth, done_signal=signal)
            return signal

        return run_subtask

    def _executor_terminal(self, task: TaskRun) -> None:
        if task.depth > 0:
            self._live_subtasks -= 1
        if task.depth == 0:
            pending = self._pending_clarifications.get(task.session_id)
            if pending and task.task_id in pending:
                pending.remove(task.task_id)

    # -- integration hooks -------------------------------------------------------------

    def _on_task_terminal(self, event: StateUpdateEvent) -> None:
        rec = self._task_to_turn.get(event.task_id)
        if rec is not None and rec.e2e_done_at is None:
            rec.e2e_done_at = self.sched.now

    def _on_plan_event(self, event: StateUpdateEvent) -> None:
        listeners = self._plan_listeners.get(event.session_id, ())
        if not listeners:
            return
        snapshot = self.task_snapshot(event.task_id)
        for fn in listeners:
            fn(snapshot, event.to_wire())

    def add_plan_listener(self, session_id: str, fn) -> None:
        self._plan_listeners.setdefault(session_id, []).append(fn)

    def remove_plan_listener(self, session_id: str, fn) -> None:
        try:
            self._plan_listeners.get(session_id, []).remove(fn)
        except ValueError:
            pass

    # -- introspection -------------------------------------------------------------------

    def task_snapshot(self, task_id: str) -> dict:
        task = self.tasks[task_id]
        return {
            "task_id": task.task_id,
            "session_id": task.session_id,
            "profile_id": task.profile_id,
            "status": task.status,
            "steps": [
                {
                    "step_id": s.step_id,
                    "tool": s.tool,
                    "state": s.state,
                    "started_at": s.started_at,
                    "ended_at": s.ended_at,
                    "summary": s.summary() if s.state in ("done", "failed") else "",
                }
                for s in task.graph.steps
            ],
            "edges": [list(e) for e in task.graph.edges],
            "clarification": task.clarification.question
            if task.clarification and not task.clarification.signal.done else None,
        }

    def plan_snapshots(self, session_id: str) -> list[dict]:
        self.store.get(session_id)
        return [
            self.task_snapshot(task_id)
            for task_id in self._session_tasks.get(session_id, ())
            if self.tasks[task_id].depth == 0
        ]

    def turn_records(self, session_id: str) -> list[TurnRecord]:
        return list(self._turns.get(session_id, ()))

    def session_tasks(self, session_id: str, include_nested: bool = True) -> list[TaskRun]:
        tasks = [self.tasks[t] for t in self._session_tasks.get(session_id, ())]
        if include_nested:
            return tasks
        return [t for t in tasks if t.depth == 0]

    def session_quiescent(self, session_id: str) -> bool:
        """No live turn pipelines, and every task terminal or suspended."""
        if self._live_pipelines.get(session_id, 0) > 0:
            return False
        for task_id in self._session_tasks.get(session_id, ()):
            task = self.tasks[task_id]
            if task.terminal():
                continue
            if task.status == "suspended" and task.clarification is not None \
                    and not task.clarification.signal.done:
                continue
            return False
        for rec in self._turns.get(session_id, ()):
            if rec.task_id and rec.e2e_done_at is None:
                task = self.tasks.get(rec.task_id)
                if task is not None and task.terminal():
                    return False  # terminal event still in flight
        return True
