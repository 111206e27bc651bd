"""Three-tier request routing and the routing-decision wire contract.

The wire format is a strict JSON object with fields `thought`, `mode`,
`routing_target`, and `plan` (plan items: `step`, `tool`, `args`). Unknown
fields are rejected and violations carry the byte offset of the offending
token. The reference classifier is an ordered rule cascade; a model-backed
classifier plugs in behind the same interface and must emit this schema.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import SchemaViolation
from .perception import RequestObject
from .util import cosine, tf_vector

MODES = ("chat", "tool", "agent")
MODE_TIER = {"chat": 1, "tool": 2, "agent": 3}

_TOP_FIELDS = ("thought", "mode", "routing_target", "plan")
_STEP_FIELDS = ("step", "tool", "args")


@dataclass
class PlanStepSkeleton:
    step: int
    tool: str
    args: dict[str, object] = field(default_factory=dict)


@dataclass
class RoutingDecision:
    thought: str
    mode: str
    tier: int = 0
    routing_target: str | None = None
    plan_skeleton: list[PlanStepSkeleton] | None = None
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise SchemaViolation(f"mode must be one of {MODES}, got {self.mode!r}")
        self.tier = MODE_TIER[self.mode]
        if self.mode == "chat" and self.plan_skeleton:
            raise SchemaViolation("chat decisions must not carry a plan")
        if self.mode == "agent" and not self.routing_target:
            raise SchemaViolation("agent decisions require a routing_target")


def serialize_decision(decision: RoutingDecision) -> str:
    """Render the bit-exact wire form (tier/confidence are engine-internal)."""
    obj: dict[str, object] = {"thought": decision.thought, "mode": decision.mode}
    if decision.routing_target is not None:
        obj["routing_target"] = decision.routing_target
    if decision.plan_skeleton is not None:
        obj["plan"] = [
            {"step": s.step, "tool": s.tool, "args": dict(s.args)}
            for s in decision.plan_skeleton
        ]
    return json.dumps(obj)


def _offset_of(raw: str, key: str) -> int:
    pos = raw.find(f'"{key}"')
    return pos if pos >= 0 else 0


def validate_decision(raw_text: str) -> RoutingDecision:
    """Parse and validate a raw backend payload against the decision schema."""
    try:
        obj = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"malformed JSON: {exc.msg}", position=exc.pos) from None
    if not isinstance(obj, dict):
        raise SchemaViolation("decision payload must be a JSON object")
    for key in obj:
        if key not in _TOP_FIELDS:
            raise SchemaViolation(f"unknown field {key!r}", position=_offset_of(raw_text, key))
    mode = obj.get("mode")
    if mode not in MODES:
        raise SchemaViolation(
            f"mode must be one of {MODES}, got {mode!r}",
            position=_offset_of(raw_text, "mode"),
        )
    thought = obj.get("thought", "")
    if not isinstance(thought, str):
        raise SchemaViolation("thought must be a string", position=_offset_of(raw_text, "thought"))
    target = obj.get("routing_target")
    if target is not None and not isinstance(target, str):
        raise SchemaViolation(
            "routing_target must be a string", position=_offset_of(raw_text, "routing_target")
        )
    skeleton: list[PlanStepSkeleton] | None = None
    if "plan" in obj:
        plan = obj["plan"]
        if not isinstance(plan, list):
            raise SchemaViolation("plan must be an array", position=_offset_of(raw_text, "plan"))
        skeleton = []
        for i, item in enumerate(plan):
            if not isinstance(item, dict):
                raise SchemaViolation(f"plan[{i}] must be an object",
                                      position=_offset_of(raw_text, "plan"))
            for key in item:
                if key not in _STEP_FIELDS:
                    raise SchemaViolation(
                        f"unknown plan field {key!r}", position=_offset_of(raw_text, key)
                    )
            step_no = item.get("step")
            if not isinstance(step_no, int) or isinstance(step_no, bool) or step_no != i + 1:
                raise SchemaViolation(
                    f"plan step numbers must be contiguous from 1; plan[{i}].step={step_no!r}",
                    position=_offset_of(raw_text, "step"),
                )
            tool = item.get("tool")
            if not isinstance(tool, str) or not tool:
                raise SchemaViolation(
                    f"plan[{i}].tool must be a non-empty string",
                    position=_offset_of(raw_text, "tool"),
                )
            args = item.get("args", {})
            if not isinstance(args, dict):
                raise SchemaViolation(
                    f"plan[{i}].args must be an object", position=_offset_of(raw_text, "args")
                )
            skeleton.append(PlanStepSkeleton(step=step_no, tool=tool, args=args))
    try:
        return RoutingDecision(
            thought=thought, mode=mode, routing_target=target, plan_skeleton=skeleton
        )
    except SchemaViolation as exc:
        raise SchemaViolation(str(exc).rsplit(" (at byte", 1)[0],
                              position=_offset_of(raw_text, "mode")) from None


# -- reference rule cascade ------------------------------------------------------

# keyword -> deterministic tool intent (tier 2)
TOOL_INTENTS: dict[str, str] = {
    "weather": "weather",
    "forecast": "weather",
    "temperature": "weather",
    "stock": "stock",
    "stocks": "stock",
    "share price": "stock",
    "calendar": "calendar",
    "agenda": "calendar",
    "my schedule": "calendar",
    "news": "search",
    "search for": "search",
    "look up": "search",
    "find me": "search",
    "that video": "search",
    "flight status": "search",
}

# complex domain-request cues (tier 3)
DOMAIN_KEYWORDS = (
    "plan",
    "trip",
    "itinerary",
    "travel",
    "vacation",
    "consult",
    "advice",
    "advise",
    "diagnose",
    "symptom",
    "medical",
    "doctor",
    "legal",
    "lawyer",
    "contract",
    "analyze",
    "analysis",
    "organize",
    "compare options",
    "illustration",
    "compose a song",
    "soundtrack",
)


def _keyword_hit(utterance_lower: str, keyword: str) -> bool:
    """Word-boundary match for single words, substring for phrases."""
    if " " in keyword:
        return keyword in utterance_lower
    return re.search(rf"\b{re.escape(keyword)}\b", utterance_lower) is not None


def matched_intents(utterance: str) -> list[tuple[str, str]]:
    """Ordered (keyword, tool) pairs from the tool-intent table; one per tool."""
    lower = utterance.lower()
    seen_tools: list[str] = []
    pairs: list[tuple[str, str]] = []
    for keyword, tool in TOOL_INTENTS.items():
        if tool not in seen_tools and _keyword_hit(lower, keyword):
            seen_tools.append(tool)
            pairs.append((keyword, tool))
    return pairs


def matched_domains(utterance: str) -> list[str]:
    lower = utterance.lower()
    return [kw for kw in DOMAIN_KEYWORDS if _keyword_hit(lower, kw)]


def route_target(utterance: str, profiles: Sequence, fallback: str) -> str:
    """Pick the agent profile whose description/tags best match the request.

    Similarity is cosine over normalized term-frequency vectors; a zero-overlap
    query falls back to the configured generalist.
    """
    query = tf_vector(utterance)
    best_id, best_score = fallback, 0.0
    for profile in profiles:
        text = f"{profile.description} {' '.join(profile.capability_tags)}"
        score = cosine(query, tf_vector(text))
        if score > best_score:
            best_id, best_score = profile.profile_id, score
    return best_id


class RuleClassifier:
    """Ordered cascade: tool-intent table, then domain table / multi-intent,
    then default chat. Deterministic and total."""

    def __init__(self, profiles: Sequence = (), generalist: str = "Generalist"):
        self._profiles = list(profiles)
        self._generalist = generalist

    def classify(self, request: RequestObject, context=None) -> RoutingDecision:
        intents = matched_intents(request.utterance)
        domain_hits = matched_domains(request.utterance)
        # a domain cue, or more than one distinct tool intent, escalates to agent
        if domain_hits or len(intents) > 1:
            target = route_target(request.utterance, self._profiles, self._generalist)
            cues = domain_hits + [kw for kw, _ in intents]
            return RoutingDecision(
                thought=f"domain request ({', '.join(cues[:3])}) -> delegate to {target}",
                mode="agent",
                routing_target=target,
                confidence=1.0,
            )
        if intents:
            keyword, tool = intents[0]
            return RoutingDecision(
                thought=f"tool intent '{keyword}' -> {tool}",
                mode="tool",
                plan_skeleton=[PlanStepSkeleton(step=1, tool=tool, args={})],
                confidence=1.0,
            )
        return RoutingDecision(thought="no tool or domain cue; chat", mode="chat",
                               confidence=0.5)


class BackedClassifier:
    """Wraps a text-completion backend that must emit the decision schema.

    Any backend failure or schema violation falls back to chat with
    confidence 0 so the fast track is never blocked.
    """

    def __init__(self, backend: Callable[[str], str]):
        self._backend = backend

    def classify(self, request: RequestObject, context=None) -> RoutingDecision:
        try:
            raw = self._backend(request.utterance)
            return validate_decision(raw)
        except Exception:
            return RoutingDecision(
                thought="classifier backend failed; fast-track fallback",
                mode="chat",
                confidence=0.0,
            )
