"""Benchmark corpus: case schema, validation, and the bundled 200-case set.

Cases are authored to a hard-case taxonomy: long-horizon sessions exceed 8
turns, cross-domain cases require at least two distinct tools, and ambiguous
cases script a clarification round-trip. Each case carries three layers of
ground truth: per-turn routing modes, acceptable tool-call variant sets, and
key information points the final responses must convey. Cases tagged
`unambiguous` are keyword-separable by construction, so the reference
classifier must route them perfectly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import CorpusError

ROUTING_MODES = ("chat", "tool", "agent")

_GESTURES = ("waving", "smiling", "slumped posture", "nodding", "leaning in", "stretching")
_PLACES = ("living room", "office desk", "kitchen", "balcony", "commute")


def _video_frame(i: int) -> dict:
    return {
        "subject": "user",
        "action": _GESTURES[i % len(_GESTURES)],
        "environment": _PLACES[i % len(_PLACES)],
    }


@dataclass
class CaseTurn:
    text: str
    routing_gt: str
    video: dict | None = None
    kind: str = "request"  # request | followup | clarification-answer

    def to_obj(self) -> dict:
        return {"text": self.text, "routing_gt": self.routing_gt,
                "video": self.video, "kind": self.kind}

    @classmethod
    def from_obj(cls, obj: Mapping) -> "CaseTurn":
        return cls(text=obj["text"], routing_gt=obj["routing_gt"],
                   video=obj.get("video"), kind=obj.get("kind", "request"))


@dataclass
class BenchmarkCase:
    case_id: str
    turns: list[CaseTurn]
    tags: list[str] = field(default_factory=list)
    execution_gt: list[list[dict]] | None = None  # variant sets of {tool, args}
    response_gt: list[str] | None = None
    memory_seed: dict | None = None
    persona_id: str = "companion"
    user_id: str = ""

    def __post_init__(self) -> None:
        if not self.user_id:
            self.user_id = f"u-{self.case_id}"

    def to_obj(self) -> dict:
        return {
            "case_id": self.case_id,
            "persona_id": self.persona_id,
            "user_id": self.user_id,
            "tags": list(self.tags),
            "memory_seed": self.memory_seed,
            "turns": [t.to_obj() for t in self.turns],
            "execution_gt": self.execution_gt,
            "response_gt": self.response_gt,
        }

    @classmethod
    def from_obj(cls, obj: Mapping) -> "BenchmarkCase":
        return cls(
            case_id=obj["case_id"],
            persona_id=obj.get("persona_id", "companion"),
            user_id=obj.get("user_id", ""),
            tags=list(obj.get("tags", ())),
            memory_seed=obj.get("memory_seed"),
            turns=[CaseTurn.from_obj(t) for t in obj["turns"]],
            execution_gt=obj.get("execution_gt"),
            response_gt=obj.get("response_gt"),
        )


def validate_corpus(cases: Sequence[BenchmarkCase], tool_ids: Iterable[str]) -> None:
    """Check per-case invariants; raises CorpusError listing offenders."""
    known = set(tool_ids)
    problems: list[str] = []
    seen_ids: set[str] = set()
    for case in cases:
        where = case.case_id or "<missing id>"
        if case.case_id in seen_ids:
            problems.append(f"{where}: duplicate case id")
        seen_ids.add(case.case_id)
        if not case.turns:
            problems.append(f"{where}: no turns")
        for i, turn in enumerate(case.turns):
            if turn.routing_gt not in ROUTING_MODES:
                problems.append(f"{where}: turn {i} has bad routing_gt {turn.routing_gt!r}")
            if not turn.text.strip():
                problems.append(f"{where}: turn {i} is empty")
        if case.execution_gt is not None:
            for v, variant in enumerate(case.execution_gt):
                tools_in_variant = set()
                for call in variant:
                    if call["tool"] not in known:
                        problems.append(
                            f"{where}: GT variant {v} references unknown tool {call['tool']!r}"
                        )
                    tools_in_variant.add(call["tool"])
                if "cross-domain" in case.tags and len(tools_in_variant) < 2:
                    problems.append(f"{where}: cross-domain variant {v} has <2 distinct tools")
        elif "cross-domain" in case.tags:
            problems.append(f"{where}: cross-domain case lacks execution GT")
        if "long-horizon" in case.tags and len(case.turns) <= 8:
            problems.append(f"{where}: long-horizon case has only {len(case.turns)} turns")
        if "ambiguous" in case.tags and not any(
            t.kind == "clarification-answer" for t in case.turns
        ):
            problems.append(f"{where}: ambiguous case lacks a clarification answer turn")
        if case.response_gt is not None and not case.response_gt:
            problems.append(f"{where}: empty response GT list")
    if problems:
        raise CorpusError(problems)


def dump_corpus(cases: Sequence[BenchmarkCase], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [case.to_obj() for case in cases]
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_corpus(path: str | Path) -> list[BenchmarkCase]:
    objs = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(objs, list):
        raise CorpusError(["corpus file must hold a JSON array of cases"])
    return [BenchmarkCase.from_obj(obj) for obj in objs]


# -- bundled corpus ---------------------------------------------------------------------
#
# 200 cases: 60 chat, 40 single-tool, 30 trips, 30 long-horizon, 20 cross-domain
# multi-intent, 20 ambiguous (clarification). Built deterministically from the
# tables below; no RNG.

_GREETINGS = [
    "Hello there!",
    "Good morning!",
    "Hey, how have you been?",
    "Good evening, friend.",
    "Hi! Long time no talk.",
]

_SMALLTALK = [
    "That movie last night made me smile.",
    "The garden looks wonderful this week.",
    "Work felt endless but we made it.",
    "Tell em something cheerful.",
    "Dinner turned out great tonight.",
]

_FOLLOWUPS = ["Great, thanks!", "Perfect, you're wonderful.", "Nice, that helps a lot.",
              "Awesome, love it!"]

_HOBBIES = ["Basketball", "Gardening", "Chess", "Photography", "Cycling",
            "Painting", "Calligraphy", "Baking", "Birdwatching", "Surfing"]

_WEATHER_CITIES = ["Beijing", "Tokyo", "Paris", "London", "Sydney", "Cairo",
                   "Oslo", "Lima", "Denver", "Austin"]

_TICKERS = ["ACME", "GLOBX", "NOVA", "ORBIT", "ZEPHYR", "QUANT", "HELIO",
            "TERRA", "LUMEN", "VERTX"]

_DAYS = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday"]

_TRIP_CITIES = ["Tokyo", "Kyoto", "Paris", "Rome", "Lisbon", "Athens",
                "Marrakech", "Havana", "Reykjavik", "Queenstown"]

_NEWS_TOPICS = ["the city marathon", "the lantern festival", "the harvest fair",
                "the jazz week", "the river regatta"]

_VIDEO_DETAILS = ["the one with the red bicycle", "the clip from the rooftop",
                  "the one where everyone laughs", "the one filmed at the lake"]

# canned dining tables mirrored from the simulated tool corpus
_DINING_FIRST = {
    "tokyo": "Sushi Omakase Counter",
    "kyoto": "Kaiseki Garden House",
}


def _dining_first_choice(city: str) -> str:
    return _DINING_FIRST.get(city.lower(), f"{city.title()} Sushi Bar")


def _trip_gt(city: str, hotel: bool) -> list[dict]:
    calls = [
        {"tool": "flight_search", "args": {"dest": city}},
        {"tool": "activity_search", "args": {"city": city}},
        {"tool": "dining_search", "args": {"city": city}},
    ]
    if hotel:
        calls.insert(2, {"tool": "hotel_book", "args": {"type": "Onsen"}})
    return calls


def _weather_gt(city: str) -> dict:
    return {"tool": "weather", "args": {"city": city}}


def build_default_corpus() -> list[BenchmarkCase]:
    cases: list[BenchmarkCase] = []
    frame = 0

    def turn(text: str, gt: str, kind: str = "request") -> CaseTurn:
        nonlocal frame
        frame += 1
        return CaseTurn(text=text, routing_gt=gt, video=_video_frame(frame), kind=kind)

    # -- 60 chat cases: greetings, memory QA, small talk --------------------------
    for i in range(20):
        cases.append(BenchmarkCase(
            case_id=f"chat-greet-{i:03d}",
            tags=["unambiguous"],
            turns=[turn(_GREETINGS[i % len(_GREETINGS)], "chat"),
                   turn(_FOLLOWUPS[i % len(_FOLLOWUPS)], "chat", kind="followup")],
        ))
    for i in range(20):
        hobby = _HOBBIES[i % len(_HOBBIES)]
        cases.append(BenchmarkCase(
            case_id=f"chat-memory-{i:03d}",
            tags=["unambiguous"],
            memory_seed={"profile": {"Hobby": hobby}, "history": []},
            turns=[turn("Do you remember what hobby makes me happiest?", "chat"),
                   turn(_FOLLOWUPS[(i + 1) % len(_FOLLOWUPS)], "chat", kind="followup")],
            response_gt=[hobby],
        ))
    for i in range(20):
        cases.append(BenchmarkCase(
            case_id=f"chat-small-{i:03d}",
            tags=["unambiguous"],
            turns=[turn(_SMALLTALK[i % len(_SMALLTALK)], "chat"),
                   turn(_FOLLOWUPS[(i + 2) % len(_FOLLOWUPS)], "chat", kind="followup")],
        ))

    # -- 40 single-tool cases --------------------------------------------------------
    for i in range(15):
        city = _WEATHER_CITIES[i % len(_WEATHER_CITIES)]
        cases.append(BenchmarkCase(
            case_id=f"tool-weather-{i:03d}",
            tags=["unambiguous"],
            turns=[turn(f"Could you check the weather in {city} right now?", "tool"),
                   turn(_FOLLOWUPS[i % len(_FOLLOWUPS)], "chat", kind="followup")],
            execution_gt=[[_weather_gt(city)]],
            response_gt=[f"°C in {city}"],
        ))
    for i in range(10):
        ticker = _TICKERS[i % len(_TICKERS)]
        cases.append(BenchmarkCase(
            case_id=f"tool-stock-{i:03d}",
            tags=["unambiguous"],
            turns=[turn(f"How is {ticker} stock doing this week?", "tool"),
                   turn(_FOLLOWUPS[(i + 1) % len(_FOLLOWUPS)], "chat", kind="followup")],
            execution_gt=[[{"tool": "stock", "args": {"symbol": ticker}}]],
            response_gt=[f"{ticker} trading at"],
        ))
    for i in range(10):
        day = _DAYS[i % len(_DAYS)]
        cases.append(BenchmarkCase(
            case_id=f"tool-calendar-{i:03d}",
            tags=["unambiguous"],
            turns=[turn(f"What does my schedule look like for {day}?", "tool"),
                   turn(_FOLLOWUPS[(i + 2) % len(_FOLLOWUPS)], "chat", kind="followup")],
            execution_gt=[[{"tool": "calendar", "args": {"date": day}}]],
            response_gt=["Team sync at 10:00"],
        ))
    for i in range(5):
        topic = _NEWS_TOPICS[i % len(_NEWS_TOPICS)]
        text = f"Any news worth sharing about {topic}?"
        cases.append(BenchmarkCase(
            case_id=f"tool-news-{i:03d}",
            tags=["unambiguous"],
            turns=[turn(text, "tool"),
                   turn(_FOLLOWUPS[(i + 3) % len(_FOLLOWUPS)], "chat", kind="followup")],
            execution_gt=[[{"tool": "search", "args": {"query": text}}]],
            response_gt=[f"Overview of {text}"],
        ))

    # -- 30 trip cases (agent; flight and activities run in parallel) ------------------
    for i in range(30):
        city = _TRIP_CITIES[i % len(_TRIP_CITIES)]
        hotel = i % 3 == 0
        if hotel:
            text = f"Plan a relaxing trip to {city} and book an onsen hotel stay."
        elif i % 3 == 1:
            text = f"I'm exhausted... Plan a trip to {city} this weekend."
        else:
            text = f"Please plan a short vacation to {city}."
        seed = None
        points = [_dining_first_choice(city)]
        if i % 5 == 0:
            seed = {"profile": {"Hobby": _HOBBIES[i % len(_HOBBIES)]},
                    "history": ["Dislikes raw fish"]}
            first = _dining_first_choice(city)
            points = ["Wagyu Beef Teppanyaki"] if city.lower() == "tokyo" else [
                f"{city.title()} Grill House"]
        cases.append(BenchmarkCase(
            case_id=f"trip-{i:03d}",
            tags=["unambiguous", "cross-domain", "parallel"],
            memory_seed=seed,
            turns=[turn(text, "agent"),
                   turn(_FOLLOWUPS[i % len(_FOLLOWUPS)], "chat", kind="followup")],
            execution_gt=[_trip_gt(city, hotel)],
            response_gt=[f"Flight DT", *points],
        ))

    # -- 30 long-horizon cases (>8 turns, mixed modes) -----------------------------------
    for i in range(30):
        city_a = _WEATHER_CITIES[i % len(_WEATHER_CITIES)]
        city_b = _TRIP_CITIES[(i + 3) % len(_TRIP_CITIES)]
        ticker = _TICKERS[(i + 5) % len(_TICKERS)]
        day = _DAYS[i % len(_DAYS)]
        gt_calls = [
            _weather_gt(city_a),
            {"tool": "stock", "args": {"symbol": ticker}},
            *_trip_gt(city_b, hotel=False),
            {"tool": "calendar", "args": {"date": day}},
        ]
        cases.append(BenchmarkCase(
            case_id=f"long-{i:03d}",
            tags=["unambiguous", "long-horizon", "parallel"],
            turns=[
                turn(_GREETINGS[i % len(_GREETINGS)], "chat"),
                turn(f"Could you check the weather in {city_a} right now?", "tool"),
                turn("Sounds lovely out there.", "chat"),
                turn(f"How is {ticker} stock doing this week?", "tool"),
                turn("Good, glad markets behave.", "chat", kind="followup"),
                turn(f"Please plan a short vacation to {city_b}.", "agent"),
                turn(_FOLLOWUPS[i % len(_FOLLOWUPS)], "chat", kind="followup"),
                turn(f"What does my schedule look like for {day}?", "tool"),
                turn("Perfect, you covered everything.", "chat", kind="followup"),
            ],
            execution_gt=[gt_calls],
            response_gt=[f"°C in {city_a}", _dining_first_choice(city_b),
                         "Team sync at 10:00"],
        ))

    # -- 20 cross-domain multi-intent cases (two tools in one agent turn) ------------------
    for i in range(20):
        city = _WEATHER_CITIES[(i + 2) % len(_WEATHER_CITIES)]
        topic = _NEWS_TOPICS[i % len(_NEWS_TOPICS)]
        text = f"Check the weather in {city} and any news about {topic}."
        cases.append(BenchmarkCase(
            case_id=f"cross-{i:03d}",
            tags=["unambiguous", "cross-domain", "parallel"],
            turns=[turn(text, "agent"),
                   turn(_FOLLOWUPS[(i + 1) % len(_FOLLOWUPS)], "chat", kind="followup")],
            execution_gt=[[
                _weather_gt(city),
                {"tool": "search", "args": {"query": text}},
            ]],
            response_gt=[f"°C in {city}", f"Overview of {text}"],
        ))

    # -- 20 ambiguous cases (retrieval stalls; clarification round-trip) --------------------
    for i in range(20):
        detail = _VIDEO_DETAILS[i % len(_VIDEO_DETAILS)]
        text = f"Can you find me that video from last month, take {i}?"
        answer = f"It was {detail}."
        cases.append(BenchmarkCase(
            case_id=f"ambig-{i:03d}",
            tags=["ambiguous"],
            turns=[turn(text, "tool"),
                   turn(answer, "chat", kind="clarification-answer"),
                   turn(_FOLLOWUPS[i % len(_FOLLOWUPS)], "chat", kind="followup")],
            execution_gt=[[{
                "tool": "search",
                "args": {"query": text, "clarification_answer": answer},
            }]],
            response_gt=["video matching"],
        ))

    return cases
