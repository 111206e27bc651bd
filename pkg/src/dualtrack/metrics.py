"""Offline and online metric formulas over decisions, traces, and activity
logs: dispatch precision, tool-call success rate, response fidelity, 7-day
retention, good-turn rate, session segmentation, and the action-based
task-completion proxy."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EngineError
from .util import normalize_text

MS_PER_DAY = 86_400_000.0
MS_PER_MINUTE = 60_000.0


# -- offline (benchmark) metrics -----------------------------------------------------


def dispatch_precision(decision_modes: Sequence[str], routing_gt: Sequence[str]) -> float:
    """Fraction of turns routed to the ground-truth mode."""
    if len(decision_modes) != len(routing_gt):
        raise EngineError(
            f"decision/GT length mismatch: {len(decision_modes)} vs {len(routing_gt)}"
        )
    if not routing_gt:
        raise EngineError("no turns to score")
    hits = sum(1 for got, want in zip(decision_modes, routing_gt) if got == want)
    return hits / len(routing_gt)


def canonical_call(tool: str, args: Mapping[str, object]) -> tuple:
    """Key-sorted, string-normalized form of one tool invocation."""
    normalized = tuple(
        (key, normalize_text(str(args[key]))) for key in sorted(args)
    )
    return (tool, normalized)


def canonical_call_set(calls: Iterable[tuple[str, Mapping]]) -> frozenset:
    return frozenset(canonical_call(tool, args) for tool, args in calls)


def case_success(invoked: Iterable[tuple[str, Mapping]],
                 gt_variants: Sequence[Iterable[tuple[str, Mapping]]]) -> bool:
    """A case succeeds iff its invoked call set equals ANY acceptable variant."""
    got = canonical_call_set(invoked)
    return any(got == canonical_call_set(variant) for variant in gt_variants)


def success_rate(cases: Sequence[tuple[Iterable, Sequence]]) -> float:
    """cases: (invoked_calls, gt_variant_sets) per case with execution GT."""
    if not cases:
        raise EngineError("no cases with execution GT")
    wins = sum(1 for invoked, variants in cases if case_success(invoked, variants))
    return wins / len(cases)


def response_hit(response: str, key_points: Sequence[str]) -> bool:
    """Hit iff every key point appears as a normalized substring."""
    haystack = normalize_text(response)
    return all(normalize_text(point) in haystack for point in key_points)


def fidelity(scored: Sequence[tuple[str, Sequence[str]]]) -> float:
    """scored: (response_text, key_points) per case; fraction of hits."""
    if not scored:
        raise EngineError("no cases with response GT")
    for _, points in scored:
        if not points:
            raise EngineError("key points must be non-empty for scored cases")
    hits = sum(1 for response, points in scored if response_hit(response, points))
    return hits / len(scored)


# -- activity logs (online metrics) ------------------------------------------------------

EVENT_KINDS = ("turn", "click", "share", "like", "terminate")


@dataclass(frozen=True)
class ActivityRecord:
    user_id: str
    timestamp_ms: float
    event_kind: str
    extra: str = ""


def load_activity_csv(path: str | Path) -> list[ActivityRecord]:
    """CSV columns: user_id,timestamp_ms,event_kind,extra."""
    records = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "user_id":
                continue
            records.append(ActivityRecord(
                user_id=row[0],
                timestamp_ms=float(row[1]),
                event_kind=row[2],
                extra=row[3] if len(row) > 3 else "",
            ))
    _check_monotone(records)
    return records


def _check_monotone(records: Sequence[ActivityRecord]) -> None:
    last: dict[str, float] = {}
    for rec in records:
        if rec.user_id in last and rec.timestamp_ms < last[rec.user_id]:
            raise EngineError(f"timestamps decrease for user {rec.user_id}")
        last[rec.user_id] = rec.timestamp_ms


def segment_sessions(records: Sequence[ActivityRecord],
                     gap_minutes: float = 30.0) -> list[list[ActivityRecord]]:
    """Split per-user activity into sessions: a pause longer than the gap
    starts a new session."""
    by_user: dict[str, list[ActivityRecord]] = {}
    for rec in records:
        by_user.setdefault(rec.user_id, []).append(rec)
    gap_ms = gap_minutes * MS_PER_MINUTE
    sessions: list[list[ActivityRecord]] = []
    for user_id in sorted(by_user):
        current: list[ActivityRecord] = []
        previous: float | None = None
        for rec in by_user[user_id]:
            if previous is not None and rec.timestamp_ms - previous > gap_ms:
                sessions.append(current)
                current = []
            current.append(rec)
            previous = rec.timestamp_ms
        if current:
            sessions.append(current)
    return sessions


def avg_turns(sessions: Sequence[Sequence[ActivityRecord]]) -> float:
    if not sessions:
        raise EngineError("no sessions")
    totals = [sum(1 for rec in s if rec.event_kind == "turn") for s in sessions]
    return sum(totals) / len(sessions)


def retention7(records: Sequence[ActivityRecord], day_t: int) -> float | None:
    """|U_t ∩ U_{t+7}| / |U_t| × 100 over users with a valid turn each day.

    Returns None (undefined) when U_t is empty.
    """
    days = [rec.timestamp_ms // MS_PER_DAY for rec in records]
    if days and max(days) - min(days) < 7:
        raise EngineError("activity must span at least 8 days for retention7")
    users_t = {
        rec.user_id for rec, day in zip(records, days)
        if day == day_t and rec.event_kind == "turn"
    }
    users_t7 = {
        rec.user_id for rec, day in zip(records, days)
        if day == day_t + 7 and rec.event_kind == "turn"
    }
    if not users_t:
        return None
    return len(users_t & users_t7) / len(users_t) * 100.0


@dataclass(frozen=True)
class TurnRecordGTR:
    dwell_ms: float
    length_tokens: int
    explicit_positive: bool = False
    terminated: bool = False
    negative_sentiment: bool = False
    requeried: bool = False


def gtr(records: Sequence[TurnRecordGTR], base_ms: float = 1500.0,
        per_token_ms: float = 40.0) -> float:
    """Good Turn Rate: (dwell above the length-based threshold OR an explicit
    positive) AND no negative signal."""
    if not records:
        raise EngineError("no turn records")
    good = 0
    for rec in records:
        threshold = base_ms + per_token_ms * rec.length_tokens
        positive = rec.dwell_ms > threshold or rec.explicit_positive
        negative = rec.terminated or rec.negative_sentiment or rec.requeried
        if positive and not negative:
            good += 1
    return good / len(records)


@dataclass(frozen=True)
class ProxySession:
    tier: int
    service_click: bool
    followup_turns: tuple[str, ...] = ()  # turn tags after the deliverable, in order


_CORRECTION_TAGS = ("correction", "reformulation")


def task_completion_proxy(sessions: Sequence[ProxySession]) -> float:
    """Action-based proxy over tier-2/3 sessions only: completed iff a service
    card was clicked OR no correction/reformulation occurred within the two
    turns after the deliverable."""
    scored = [s for s in sessions if s.tier in (2, 3)]
    if not scored:
        raise EngineError("no tier-2/3 sessions")
    completed = 0
    for session in scored:
        window = session.followup_turns[:2]
        corrected = any(tag in _CORRECTION_TAGS for tag in window)
        if session.service_click or not corrected:
            completed += 1
    return completed / len(scored)
