"""Tool and sub-agent ecosystem behind one execution interface.

Tools are described by a descriptor (argument schema, latency model, failure
rate) and invoked through a context envelope. Argument validity is checked
before any latency is charged; latency is sampled from the tool's model with
a seeded generator, so a fixed seed replays the exact same latency and result
sequence. Sub-agent delegation uses an explicit contract with a deadline and
a nesting-depth cap.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Generator, Mapping, Sequence

from .errors import DelegationError, NotFoundError, RegistrationError, ValidityError
from .sim import Scheduler, SimTimeout
from .util import cosine, stable_hash, tf_vector

# -- latency -------------------------------------------------------------------


@dataclass
class LatencyModel:
    kind: str  # fixed | lognormal | pareto | stall
    params: dict[str, float] = field(default_factory=dict)

    def sample(self, rng: random.Random) -> float | None:
        """Milliseconds, or None for a stall (never completes)."""
        if self.kind == "fixed":
            return float(self.params.get("ms", 0.0))
        if self.kind == "lognormal":
            return rng.lognormvariate(self.params["mu"], self.params["sigma"])
        if self.kind == "pareto":
            return self.params.get("xm", 1.0) * rng.paretovariate(self.params.get("alpha", 1.5))
        if self.kind == "stall":
            return None
        raise ValueError(f"unknown latency kind: {self.kind!r}")

    def to_obj(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_obj(cls, obj: Mapping) -> "LatencyModel":
        return cls(kind=obj["kind"], params=dict(obj.get("params", {})))


# -- descriptors / envelopes ------------------------------------------------------

_ARG_TYPES = {
    "string": str,
    "int": int,
    "number": (int, float),
    "bool": bool,
    "list": list,
    "map": dict,
}


@dataclass
class ToolDescriptor:
    tool_id: str
    arg_schema: dict[str, str]  # name -> type, trailing '?' marks optional
    result_schema: dict[str, str]
    latency_model: LatencyModel
    failure_rate: float = 0.0

    def __post_init__(self) -> None:
        if not self.arg_schema or not self.result_schema:
            raise ValueError(f"tool {self.tool_id!r}: schemas must be non-empty")
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ValueError(f"tool {self.tool_id!r}: failure_rate out of [0,1]")

    def to_obj(self) -> dict:
        return {
            "tool_id": self.tool_id,
            "arg_schema": dict(self.arg_schema),
            "result_schema": dict(self.result_schema),
            "latency_model": self.latency_model.to_obj(),
            "failure_rate": self.failure_rate,
        }

    @classmethod
    def from_obj(cls, obj: Mapping) -> "ToolDescriptor":
        return cls(
            tool_id=obj["tool_id"],
            arg_schema=dict(obj["arg_schema"]),
            result_schema=dict(obj["result_schema"]),
            latency_model=LatencyModel.from_obj(obj["latency_model"]),
            failure_rate=float(obj.get("failure_rate", 0.0)),
        )


@dataclass
class ExecutionEnvelope:
    """Context envelope handed to a tool: args plus a read-only session slice."""

    envelope_id: str
    tool_id: str
    args: dict[str, object]
    context_slice: tuple[str, ...] = ()
    issued_at: float = 0.0

    def to_obj(self) -> dict:
        return {
            "envelope_id": self.envelope_id,
            "tool_id": self.tool_id,
            "args": dict(self.args),
            "context_slice": list(self.context_slice),
            "issued_at": self.issued_at,
        }


@dataclass
class ToolResult:
    tool_id: str
    value: dict
    summary: str
    artifact: str | None = None
    ok: bool = True


@dataclass
class ToolFailure:
    tool_id: str
    cause: str  # tool-error | timeout | validity
    detail: str = ""
    ok: bool = False


@dataclass
class DelegationContract:
    contract_id: str
    delegate_profile_id: str
    task_statement: str
    expected_result_schema: dict[str, str] = field(default_factory=dict)
    deadline_ms: float = 8000.0

    def __post_init__(self) -> None:
        if self.deadline_ms <= 0:
            raise ValueError("deadline_ms must be positive")


@dataclass
class SubAgentResult:
    contract_id: str
    value: dict
    summary: str
    ok: bool = True


def validate_args(schema: Mapping[str, str], args: Mapping[str, object]) -> None:
    """Raise ValidityError before any latency is charged."""
    for name in args:
        if name not in schema and f"{name}?" not in schema:
            raise ValidityError(f"unexpected argument {name!r}")
    for name, type_name in schema.items():
        optional = type_name.endswith("?") or name.endswith("?")
        key = name.rstrip("?")
        kind = type_name.rstrip("?")
        if key not in args:
            if not optional:
                raise ValidityError(f"missing required argument {key!r}")
            continue
        if kind == "any":
            continue
        expected = _ARG_TYPES.get(kind)
        if expected is None:
            raise ValidityError(f"unknown schema type {kind!r} for {key!r}")
        value = args[key]
        if kind in ("int", "number") and isinstance(value, bool):
            raise ValidityError(f"argument {key!r} must be {kind}, got bool")
        if not isinstance(value, expected):
            raise ValidityError(
                f"argument {key!r} must be {kind}, got {type(value).__name__}"
            )


ToolFn = Callable[[Mapping[str, object], tuple, random.Random], dict]


class ToolRegistry:
    """Read-mostly catalog of descriptors and their handlers."""

    def __init__(self) -> None:
        self._descriptors: dict[str, ToolDescriptor] = {}
        self._handlers: dict[str, ToolFn] = {}

    def register(self, descriptor: ToolDescriptor, handler: ToolFn) -> None:
        if descriptor.tool_id in self._descriptors:
            raise RegistrationError(f"tool already registered: {descriptor.tool_id!r}")
        self._descriptors[descriptor.tool_id] = descriptor
        self._handlers[descriptor.tool_id] = handler

    def descriptor(self, tool_id: str) -> ToolDescriptor:
        try:
            return self._descriptors[tool_id]
        except KeyError:
            raise NotFoundError(f"unknown tool: {tool_id!r}") from None

    def handler(self, tool_id: str) -> ToolFn:
        return self._handlers[tool_id]

    def has(self, tool_id: str) -> bool:
        return tool_id in self._descriptors

    def catalog(self) -> list[ToolDescriptor]:
        return list(self._descriptors.values())

    def tool_ids(self) -> list[str]:
        return list(self._descriptors)

    def override_latency(self, model: LatencyModel, tool_ids: Sequence[str] | None = None) -> None:
        for tool_id in tool_ids or list(self._descriptors):
            self._descriptors[tool_id].latency_model = model

    def dump_catalog(self, path: str | Path) -> None:
        objs = [d.to_obj() for d in self.catalog()]
        Path(path).write_text(json.dumps(objs, indent=2, sort_keys=True), encoding="utf-8")

    def load_catalog(self, path: str | Path, handler_map: Mapping[str, ToolFn]) -> None:
        for obj in json.loads(Path(path).read_text(encoding="utf-8")):
            desc = ToolDescriptor.from_obj(obj)
            self.register(desc, handler_map[desc.tool_id])


def invoke(registry: ToolRegistry, envelope: ExecutionEnvelope, rng: random.Random,
           sched: Scheduler | None = None) -> Generator:
    """Process that performs one tool invocation.

    Validity checks precede execution, so schema-invalid calls charge zero
    virtual time. Returns ToolResult or ToolFailure (never raises for tool
    failures; validity problems raise ValidityError).
    """
    descriptor = registry.descriptor(envelope.tool_id)
    validate_args(descriptor.arg_schema, envelope.args)
    latency = descriptor.latency_model.sample(rng)
    failed = rng.random() < descriptor.failure_rate
    if latency is None:
        if sched is None:
            raise ValueError("stall latency requires a scheduler")
        yield sched.never()  # parked forever; callers guard with a timeout
    elif latency > 0:
        yield latency
    if failed:
        return ToolFailure(envelope.tool_id, cause="tool-error",
                           detail="simulated backend failure")
    handler = registry.handler(envelope.tool_id)
    if getattr(handler, "wants_envelope", False):
        value = handler(envelope, rng)
    else:
        value = handler(envelope.args, envelope.context_slice, rng)
    summary = str(value.get("selected") or value.get("summary") or _brief(value))
    return ToolResult(
        tool_id=envelope.tool_id,
        value=value,
        summary=summary,
        artifact=value.get("artifact"),
    )


def _brief(value: Mapping) -> str:
    if not value:
        return "(empty result)"
    key = next(iter(value))
    item = value[key]
    if isinstance(item, list) and item:
        head = item[0]
        if isinstance(head, Mapping):
            head = head.get("name", str(head))
        return f"{key}: {head} (+{len(item) - 1} more)" if len(item) > 1 else f"{key}: {head}"
    return f"{key}: {item}"


def delegate(contract: DelegationContract, profile_ids: Sequence[str], sched: Scheduler,
             run_subtask: Callable[[str, str, int], object], depth: int,
             depth_cap: int) -> Generator:
    """Process that delegates a task statement to another agent profile.

    `run_subtask(profile_id, statement, depth)` must return a Signal that
    completes with a result mapping. Results are coerced to the contract's
    expected schema; a missing key or a blown deadline becomes a failure.
    """
    if depth >= depth_cap:
        raise DelegationError(
            f"delegation depth cap {depth_cap} reached for {contract.delegate_profile_id!r}"
        )
    if contract.delegate_profile_id not in profile_ids:
        raise DelegationError(f"unknown delegate profile {contract.delegate_profile_id!r}")
    sub_signal = run_subtask(contract.delegate_profile_id, contract.task_statement, depth + 1)
    try:
        value = yield sched.guard(sub_signal, contract.deadline_ms)
    except SimTimeout:
        return ToolFailure(f"agent:{contract.delegate_profile_id}", cause="timeout",
                           detail=f"delegate exceeded {contract.deadline_ms} ms")
    if not isinstance(value, Mapping):
        value = {"result": value}
    for key in contract.expected_result_schema:
        if key.rstrip("?") not in value and not key.endswith("?"):
            return ToolFailure(
                f"agent:{contract.delegate_profile_id}",
                cause="tool-error",
                detail=f"delegate result missing {key!r}",
            )
    summary = str(value.get("summary") or _brief(value))
    return SubAgentResult(contract_id=contract.contract_id, value=dict(value), summary=summary)


def http_tool_handler(url: str, client=None) -> ToolFn:
    """Handler for an external HTTP tool: the execution envelope is the
    request body; the JSON response becomes the tool's result value."""
    import httpx

    http = client or httpx.Client(timeout=30.0)

    def handler(envelope: ExecutionEnvelope, rng: random.Random) -> dict:
        resp = http.post(url, json=envelope.to_obj())
        resp.raise_for_status()
        return dict(resp.json())

    handler.wants_envelope = True  # type: ignore[attr-defined]
    return handler


# -- retrieval ---------------------------------------------------------------------


@dataclass
class Snippet:
    text: str
    source: str
    score: float


def retrieve(query: str, sources: Mapping[str, Sequence], k: int = 5) -> list[Snippet]:
    """Rank snippets from heterogeneous sources by term-frequency cosine.

    Deterministic for a fixed corpus; zero-overlap snippets are dropped.
    """
    if not query.strip():
        raise ValidityError("retrieval query must be non-empty")
    qvec = tf_vector(query)
    scored: list[Snippet] = []
    for source in sorted(sources):
        for item in sources[source]:
            text = item if isinstance(item, str) else str(item.get("text", ""))
            score = cosine(qvec, tf_vector(text))
            if score > 0:
                scored.append(Snippet(text=text, source=source, score=score))
    scored.sort(key=lambda s: (-s.score, s.source, s.text))
    return scored[:k]


# -- built-in simulated tools --------------------------------------------------------

_WEATHER_TABLE = {
    "beijing": "Sunny, 22°C in Beijing",
    "tokyo": "Partly cloudy, 19°C in Tokyo",
    "paris": "Light rain, 14°C in Paris",
    "london": "Overcast, 12°C in London",
}

_CONDITIONS = ("Sunny", "Cloudy", "Light rain", "Windy", "Clear skies")

_ACTIVITIES = {
    "tokyo": ["Senso-ji Temple walk", "teamLab Borderless", "Shibuya food crawl"],
    "kyoto": ["Fushimi Inari hike", "Arashiyama bamboo grove", "tea ceremony"],
    "paris": ["Louvre highlights", "Seine evening cruise", "Montmartre walk"],
}

_DINING = {
    "tokyo": [
        {"name": "Sushi Omakase Counter", "tags": ["raw fish", "japanese"]},
        {"name": "Wagyu Beef Teppanyaki", "tags": ["beef", "japanese"]},
        {"name": "Ramen Alley", "tags": ["noodles", "japanese"]},
    ],
    "kyoto": [
        {"name": "Kaiseki Garden House", "tags": ["seasonal", "japanese"]},
        {"name": "Kyoto Sushi Dai", "tags": ["raw fish", "japanese"]},
        {"name": "Tofu Ryokan Kitchen", "tags": ["vegetarian", "japanese"]},
    ],
}

_HOT_FEED = [
    "City marathon this weekend draws record crowds",
    "New panda cub revealed at the zoo",
    "Tech expo opens downtown with robotics demos",
]


def _city(args: Mapping) -> str:
    return str(args.get("city") or args.get("dest") or "the city").strip()


def _tool_weather(args, ctx, rng) -> dict:
    city = _city(args).lower()
    report = _WEATHER_TABLE.get(city)
    if report is None:
        h = stable_hash(f"weather:{city}")
        report = f"{_CONDITIONS[h % len(_CONDITIONS)]}, {15 + h % 15}°C in {city.title()}"
    return {"report": report, "summary": report}

def _tool_stock(args, ctx, rng) -> dict:
    symbol = str(args.get("symbol", "")).upper()
    h = stable_hash(f"stock:{symbol}")
    price = 50 + h % 200 + (h % 100) / 100.0
    quote = f"{symbol} trading at {price:.2f}"
    return {"quote": quote, "summary": quote}

def _tool_calendar(args, ctx, rng) -> dict:
    date = str(args.get("date", "today"))
    events = [f"Team sync at 10:00 ({date})", f"Dentist at 16:30 ({date})"]
    return {"events": events, "summary": f"{len(events)} events on {date}: {events[0]}"}

def _tool_search(args, ctx, rng) -> dict:
    query = str(args.get("query", ""))
    qlower = query.lower()
    answer = str(args.get("clarification_answer", "")).strip()
    # deliberately ambiguous retrieval: many near-tied hits until narrowed
    if "video" in qlower and not answer:
        candidates = [
            {"name": f"video clip #{i + 1}", "score": round(0.9 - i * 0.001, 4), "tags": ["video"]}
            for i in range(12)
        ]
        return {"candidates": candidates, "summary": f"{len(candidates)} near-tied matches"}
    if answer:
        hit = f"video matching '{answer}'"
        return {
            "candidates": [{"name": hit, "score": 0.99, "tags": ["video"]}],
            "selected": hit,
        }
    h = stable_hash(f"search:{qlower}")
    snippets = [
        f"Overview of {query} (ref {h % 997})",
        f"{query}: key facts and figures",
        f"Community answers about {query}",
    ]
    return {"snippets": snippets, "summary": snippets[0]}

def _tool_flight_search(args, ctx, rng) -> dict:
    dest = _city(args)
    h = stable_hash(f"flight:{dest.lower()}")
    code = f"DT{100 + h % 900}"
    option = f"Flight {code} to {dest.title()}, departs 09:10"
    return {
        "flights": [option, f"Flight DT{100 + (h // 7) % 900} to {dest.title()}, departs 14:40"],
        "selected": option,
    }

def _tool_hotel_book(args, ctx, rng) -> dict:
    kind = str(args.get("type", "standard"))
    h = stable_hash(f"hotel:{kind.lower()}")
    confirmation = f"{kind.title()} room reserved, confirmation DT-{1000 + h % 9000}"
    return {"confirmation": confirmation, "selected": confirmation}

def _tool_activity_search(args, ctx, rng) -> dict:
    city = _city(args).lower()
    options = _ACTIVITIES.get(city, [f"{city.title()} old town tour", f"{city.title()} museum pass"])
    return {"activities": options, "selected": options[0]}

def _tool_dining_search(args, ctx, rng) -> dict:
    city = _city(args).lower()
    base = _DINING.get(
        city,
        [
            {"name": f"{city.title()} Sushi Bar", "tags": ["raw fish"]},
            {"name": f"{city.title()} Grill House", "tags": ["beef"]},
            {"name": f"{city.title()} Garden Bistro", "tags": ["vegetarian"]},
        ],
    )
    return {"candidates": [dict(c) for c in base], "summary": f"{len(base)} dining options"}

def _tool_image_gen(args, ctx, rng) -> dict:
    prompt = str(args.get("prompt", ""))
    ref = f"image://{stable_hash(f'img:{prompt.lower()}') % 10**8:08d}"
    return {"artifact": ref, "summary": f"illustration of {prompt}", "selected": f"illustration of {prompt}"}

def _tool_music_gen(args, ctx, rng) -> dict:
    style = str(args.get("style", ""))
    ref = f"music://{stable_hash(f'music:{style.lower()}') % 10**8:08d}"
    return {"artifact": ref, "summary": f"{style} track sketch", "selected": f"{style} track sketch"}

def _tool_stall(args, ctx, rng) -> dict:  # pragma: no cover - never reached
    return {"summary": "unreachable"}


_BUILTINS: list[tuple[ToolDescriptor, ToolFn]] = []


def _builtin(tool_id: str, arg_schema: dict, result_keys: Sequence[str],
             latency: LatencyModel, handler: ToolFn) -> None:
    desc = ToolDescriptor(
        tool_id=tool_id,
        arg_schema=arg_schema,
        result_schema={k: "any" for k in result_keys},
        latency_model=latency,
    )
    _BUILTINS.append((desc, handler))


_builtin("weather", {"city": "string"}, ["report"], LatencyModel("fixed", {"ms": 200.0}), _tool_weather)
_builtin("stock", {"symbol": "string"}, ["quote"], LatencyModel("fixed", {"ms": 180.0}), _tool_stock)
_builtin("calendar", {"date": "string?"}, ["events"], LatencyModel("fixed", {"ms": 150.0}), _tool_calendar)
_builtin("search", {"query": "string", "clarification_answer": "string?"}, ["snippets"],
         LatencyModel("lognormal", {"mu": 5.3, "sigma": 0.8}), _tool_search)
_builtin("flight_search", {"dest": "string", "date": "string?"}, ["flights"],
         LatencyModel("fixed", {"ms": 350.0}), _tool_flight_search)
_builtin("hotel_book", {"type": "string"}, ["confirmation"],
         LatencyModel("fixed", {"ms": 400.0}), _tool_hotel_book)
_builtin("activity_search", {"city": "string"}, ["activities"],
         LatencyModel("fixed", {"ms": 300.0}), _tool_activity_search)
_builtin("dining_search", {"city": "string", "clarification_answer": "string?"}, ["candidates"],
         LatencyModel("fixed", {"ms": 320.0}), _tool_dining_search)
_builtin("image_gen", {"prompt": "string"}, ["artifact"],
         LatencyModel("lognormal", {"mu": 6.2, "sigma": 0.7}), _tool_image_gen)
_builtin("music_gen", {"style": "string"}, ["artifact"],
         LatencyModel("lognormal", {"mu": 6.2, "sigma": 0.7}), _tool_music_gen)
_builtin("stall", {"reason": "string?"}, ["summary"], LatencyModel("stall"), _tool_stall)


def build_builtin_registry(latency_profile: str = "default",
                           heavy_mu: float = 6.0, heavy_sigma: float = 1.8,
                           failure_rate: float = 0.0) -> ToolRegistry:
    """Registry with the simulated tool suite.

    The "heavy" profile swaps every non-stall tool onto one heavy-tailed
    lognormal so tail-latency properties can be stressed corpus-wide.
    """
    registry = ToolRegistry()
    for desc, handler in _BUILTINS:
        model = desc.latency_model
        if latency_profile == "heavy" and model.kind != "stall":
            model = LatencyModel("lognormal", {"mu": heavy_mu, "sigma": heavy_sigma})
        registry.register(
            ToolDescriptor(
                tool_id=desc.tool_id,
                arg_schema=dict(desc.arg_schema),
                result_schema=dict(desc.result_schema),
                latency_model=model,
                failure_rate=failure_rate if desc.tool_id != "stall" else 0.0,
            ),
            handler,
        )
    return registry


def hot_feed() -> list[str]:
    return list(_HOT_FEED)
