"""Config-gated backend selection, external HTTP adapters, and the global
live sub-task cap."""

from __future__ import annotations

import json
import random

import httpx

from conftest import settle
from dualtrack.config import EngineConfig
from dualtrack.engine import Engine, build_classifier, build_perceptor, build_responder
from dualtrack.fast_track import HttpResponder, TemplateResponder
from dualtrack.perception import HttpPerceptor, RequestObject
from dualtrack.routing import BackedClassifier, PlanStepSkeleton, RoutingDecision, RuleClassifier
from dualtrack.sim import Scheduler
from dualtrack.slow_track import default_profiles
from dualtrack.state import AgentMemory, ContextBundle
from dualtrack.tools import (
    ExecutionEnvelope,
    LatencyModel,
    ToolDescriptor,
    build_builtin_registry,
    http_tool_handler,
    invoke,
)


def mock_client(handler) -> httpx.Client:
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_backend_factories_follow_config():
    profiles = default_profiles()
    default = EngineConfig()
    assert isinstance(build_responder(default), TemplateResponder)
    assert isinstance(build_classifier(default, profiles), RuleClassifier)
    assert build_perceptor(default) is None
    http_cfg = EngineConfig(responder_backend="http", responder_url="http://x/r",
                            classifier_backend="http", classifier_url="http://x/c",
                            perceptor_url="http://x/p")
    assert isinstance(build_responder(http_cfg), HttpResponder)
    assert isinstance(build_classifier(http_cfg, profiles), BackedClassifier)
    assert isinstance(build_perceptor(http_cfg), HttpPerceptor)


def test_http_responder_round_trip():
    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        assert body["utterance"] == "hello"
        assert body["profile"] == {"Hobby": "Chess"}
        return httpx.Response(200, json={"text": "external reply"})

    backend = HttpResponder("http://fake/respond", client=mock_client(handler),
                            latency_ms=25.0)
    text, latency = backend.generate(
        RequestObject("s1", "hello"),
        ContextBundle(profile={"Hobby": "Chess"}, entries=[], token_total=0),
        AgentMemory(persona_id="companion", persona="warm"),
    )
    assert text == "external reply" and latency == 25.0


def test_http_perceptor_round_trip():
    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        assert body == {"subject": "user", "action": "waving"}
        return httpx.Response(200, json={"caption": "user waving at camera"})

    perceptor = HttpPerceptor("http://fake/caption", client=mock_client(handler))
    assert perceptor.caption({"subject": "user", "action": "waving"}) == \
        "user waving at camera"


def test_http_tool_receives_envelope_as_request_body():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen.update(json.loads(request.content))
        return httpx.Response(200, json={"quote": "ACME at 99", "summary": "ACME at 99"})

    registry = build_builtin_registry()
    registry.register(
        ToolDescriptor("remote_quote", {"symbol": "string"}, {"quote": "any"},
                       LatencyModel("fixed", {"ms": 40.0})),
        http_tool_handler("http://fake/tool", client=mock_client(handler)),
    )
    sched = Scheduler()
    envelope = ExecutionEnvelope("env-1", "remote_quote", {"symbol": "ACME"},
                                 context_slice=("Hobby: Chess",), issued_at=0.0)
    task = sched.spawn(invoke(registry, envelope, random.Random(1), sched))
    sched.run_until_idle()
    assert task.value.value["quote"] == "ACME at 99"
    assert seen == envelope.to_obj()  # the envelope is the wire body
    assert sched.now == 40.0


class _FanoutClassifier:
    """Four parallel delegation steps, to push on the live sub-task cap."""

    def classify(self, request, context=None):
        return RoutingDecision(
            thought="scripted", mode="agent", routing_target="Generalist",
            plan_skeleton=[
                PlanStepSkeleton(i, "agent:Generalist", {"statement": f"subjob {i}"})
                for i in range(1, 5)
            ],
        )


def test_live_subtask_cap_refuses_excess_delegations():
    config = EngineConfig(max_live_subtasks=2, task_concurrency=4)
    engine = Engine(config, Scheduler(), classifier=_FanoutClassifier())
    sid = engine.open_session("u1", "companion").session_id
    rec = engine.submit_turn(sid, text="fan out the work")
    assert settle(engine, sid)
    task = engine.tasks[rec.task_id]
    states = [s.state for s in task.graph.steps]
    assert states.count("done") == 2
    assert states.count("failed") == 2
    failed = [s for s in task.graph.steps if s.state == "failed"]
    assert all("cap" in s.failure.detail for s in failed)
    assert engine._live_subtasks == 0  # all nested tasks drained
    assert task.status == "partial"


def test_engine_with_canned_model_classifier():
    canned = json.dumps({
        "thought": "travel request",
        "mode": "agent",
        "routing_target": "TravelPlanner",
        "plan": [
            {"step": 1, "tool": "flight_search", "args": {"dest": "Tokyo"}},
            {"step": 2, "tool": "hotel_book", "args": {"type": "Onsen"}},
        ],
    })
    engine = Engine(EngineConfig(), Scheduler(),
                    classifier=BackedClassifier(lambda prompt: canned))
    sid = engine.open_session("u1", "companion").session_id
    rec = engine.submit_turn(sid, text="please arrange the usual")
    assert settle(engine, sid)
    assert rec.decision.mode == "agent"
    task = engine.tasks[rec.task_id]
    assert [s.tool for s in task.graph.steps] == ["flight_search", "hotel_book"]
    assert task.status == "done"
    deliverable = next(e for e in engine.store.transcript(sid)
                       if e.kind == "deliverable")
    assert "Onsen" in deliverable.content


class _DelegateToFoodExpert:
    def classify(self, request, context=None):
        return RoutingDecision(
            thought="scripted", mode="agent", routing_target="TravelPlanner",
            plan_skeleton=[PlanStepSkeleton(
                1, "agent:FoodExpert",
                {"statement": "dining shortlist in Tokyo",
                 "expected_schema": {"candidates": "list"}},
            )],
        )


def test_delegation_to_food_expert_returns_candidate_list():
    engine = Engine(EngineConfig(), Scheduler(), classifier=_DelegateToFoodExpert())
    sid = engine.open_session("u1", "companion").session_id
    rec = engine.submit_turn(sid, text="have a specialist shortlist dinner spots")
    assert settle(engine, sid)
    task = engine.tasks[rec.task_id]
    assert task.status == "done"
    result = task.graph.steps[0].result
    assert isinstance(result.value["candidates"], list)
    assert any("Sushi" in c["name"] or "Wagyu" in c["name"]
               for c in result.value["candidates"])
    nested = [t for t in engine.session_tasks(sid) if t.depth == 1]
    assert len(nested) == 1 and nested[0].profile_id == "FoodExpert"
    # nested tasks report through their contract, never the transcript
    deliverables = [e for e in engine.store.transcript(sid) if e.kind == "deliverable"]
    assert len(deliverables) == 1


def test_engine_backend_failure_never_blocks_fast_track():
    def broken(prompt: str) -> str:
        raise RuntimeError("model backend down")

    engine = Engine(EngineConfig(), Scheduler(),
                    classifier=BackedClassifier(broken))
    sid = engine.open_session("u1", "companion").session_id
    rec = engine.submit_turn(sid, text="plan a trip to Tokyo")
    assert settle(engine, sid)
    assert rec.decision.mode == "chat" and rec.decision.confidence == 0.0
    assert rec.ttft_ms() is not None and rec.ttft_ms() <= 500.0
