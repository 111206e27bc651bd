"""The data flywheel: log interaction episodes, judge them on three criteria,
curate silver/gold sets, fold verbose execution branches into capped
summaries, and distill sessions into knowledge nuggets.

Runs as an offline batch over the episode store; it reads session snapshots
and writes only nuggets (through the memory store) and new files.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EngineError, SchemaViolation
from .state import KnowledgeNugget, MemoryStore, SessionState, TraceItem
from .tools import ToolRegistry, validate_args
from .util import normalize_text, token_estimate

# -- sentiment lexicon (signed word list; score = (pos-neg)/max(1,pos+neg)) -------------

POSITIVE_WORDS = frozenset((
    "great", "thanks", "thank", "love", "loved", "awesome", "perfect", "nice",
    "good", "cool", "amazing", "helpful", "wonderful", "excited", "fantastic",
    "brilliant", "yay", "excellent",
))
NEGATIVE_WORDS = frozenset((
    "bad", "terrible", "wrong", "hate", "awful", "annoying", "useless", "slow",
    "worse", "horrible", "frustrating", "exhausted", "tired", "angry",
    "disappointed", "confusing",
))

ENGAGEMENT_TERMINAL = frozenset(("bye", "stop", "cancel", ""))

_CORRECTION_RE = re.compile(
    r"^(no[,. ]|not what|that's wrong|that is wrong|actually[, ])", re.IGNORECASE
)

_WORD_RE = re.compile(r"[a-z']+")


def meaningful_follow_up(turns: Sequence[Mapping]) -> bool:
    """True when some assistant response elicited a non-terminal user turn."""
    for i, turn in enumerate(turns):
        if turn["role"] != "assistant":
            continue
        nxt = next((u for u in turns[i + 1:] if u["role"] == "user"), None)
        if nxt is not None and normalize_text(nxt["content"]) not in ENGAGEMENT_TERMINAL:
            return True
    return False


def sentiment_score(texts: Iterable[str]) -> float:
    pos = neg = 0
    for text in texts:
        for word in _WORD_RE.findall(text.lower()):
            if word in POSITIVE_WORDS:
                pos += 1
            elif word in NEGATIVE_WORDS:
                neg += 1
    score = (pos - neg) / max(1, pos + neg)
    return max(-1.0, min(1.0, score))


# -- episodes ----------------------------------------------------------------------------


@dataclass
class Episode:
    episode_id: str
    session_id: str
    turns: list[dict]
    traces: list[dict]
    routing_decisions: list[str]
    outcome_signals: dict
    working_memory: list[dict] = field(default_factory=list)

    def to_obj(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "session_id": self.session_id,
            "turns": self.turns,
            "traces": self.traces,
            "routing_decisions": self.routing_decisions,
            "outcome_signals": self.outcome_signals,
            "working_memory": self.working_memory,
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_obj(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_obj(cls, obj: Mapping) -> "Episode":
        return cls(
            episode_id=obj["episode_id"],
            session_id=obj["session_id"],
            turns=list(obj["turns"]),
            traces=list(obj["traces"]),
            routing_decisions=list(obj["routing_decisions"]),
            outcome_signals=dict(obj["outcome_signals"]),
            working_memory=list(obj.get("working_memory", ())),
        )

    def user_texts(self) -> list[str]:
        return [t["content"] for t in self.turns if t["role"] == "user"]


def log_episode(session: SessionState, window: tuple[int, int], traces: Sequence[dict],
                decisions: Sequence[str], episode_id: str | None = None) -> Episode:
    """Deterministic episode slice [start, end) of the session transcript."""
    start, end = window
    turns = [e.to_record() for e in session.transcript[start:end]]
    if not turns:
        raise EngineError(f"empty episode window {window} for {session.session_id}")
    for trace in traces:
        if trace.get("session_id") != session.session_id:
            raise EngineError("trace belongs to a different session")
    user_entries = [t for t in turns if t["role"] == "user"]
    signals = {
        "followed_up": meaningful_follow_up(turns),
        "user_sentiment": sentiment_score(t["content"] for t in user_entries),
        "corrections": sum(
            1 for t in user_entries if _CORRECTION_RE.search(t["content"])
        ),
    }
    return Episode(
        episode_id=episode_id or f"{session.session_id}-w{start:04d}-{end:04d}",
        session_id=session.session_id,
        turns=turns,
        traces=[dict(t) for t in traces],
        routing_decisions=list(decisions),
        outcome_signals=signals,
        working_memory=[
            {
                "task_id": item.task_id,
                "step_id": item.step_id,
                "payload": item.payload,
                "token_estimate": item.token_estimate,
                "folded": item.folded,
            }
            for item in session.working_memory
        ],
    )


class EpisodeStore:
    """One JSON file per episode under the store directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def save(self, episode: Episode) -> Path:
        path = self.root / f"{episode.episode_id}.json"
        path.write_bytes(episode.to_bytes())
        return path

    def load_all(self) -> list[Episode]:
        episodes = []
        for path in sorted(self.root.glob("*.json")):
            episodes.append(Episode.from_obj(json.loads(path.read_text(encoding="utf-8"))))
        return episodes


# -- judging ------------------------------------------------------------------------------


@dataclass
class JudgeVerdict:
    engagement: bool
    compliance: bool
    sentiment: float
    reasoning: str

    def passes(self, sentiment_threshold: float = 0.0) -> bool:
        return self.engagement and self.compliance and self.sentiment >= sentiment_threshold

    def to_obj(self) -> dict:
        return {
            "engagement": self.engagement,
            "compliance": self.compliance,
            "sentiment": self.sentiment,
            "reasoning": self.reasoning,
        }


def judge(episode: Episode, registry: ToolRegistry | None = None,
          allowed_tools: set[str] | None = None) -> JudgeVerdict:
    """Reference judge over the three criteria.

    Engagement: a user turn follows the last assistant entry and is not a
    terminal token. Compliance: every invoked tool appears in the declared
    plan (or the provided ground truth) with schema-valid args. Sentiment:
    signed lexicon score over user turns, clamped to [-1, 1].
    """
    engagement = meaningful_follow_up(episode.turns)

    compliance = True
    notes = []
    for trace in episode.traces:
        planned = {s["tool"] for s in trace.get("steps", ())}
        allowed = allowed_tools if allowed_tools is not None else planned
        for step in trace.get("steps", ()):
            invoked = step.get("invoked_args")
            if invoked is None:
                continue
            if step["tool"] not in allowed:
                compliance = False
                notes.append(f"tool {step['tool']} outside the declared plan")
                continue
            if registry is not None and registry.has(step["tool"]):
                try:
                    validate_args(registry.descriptor(step["tool"]).arg_schema, invoked)
                except Exception as exc:
                    compliance = False
                    notes.append(f"{step['tool']} args invalid: {exc}")

    sentiment = sentiment_score(episode.user_texts())
    reasoning = (
        f"engagement={'follow-up observed' if engagement else 'no meaningful follow-up'}; "
        f"compliance={'plan matched' if compliance else '; '.join(notes)}; "
        f"sentiment={sentiment:+.2f} from lexicon"
    )
    return JudgeVerdict(engagement=engagement, compliance=compliance,
                        sentiment=sentiment, reasoning=reasoning)


_JUDGE_FIELDS = ("persona_score", "empathy_score", "fidelity_hit", "reasoning")


def validate_judge_payload(raw_text: str) -> dict:
    """Validate a model judge's output against the quality-assessment schema
    (persona_score, empathy_score, fidelity_hit, reasoning)."""
    try:
        obj = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"malformed judge payload: {exc.msg}", position=exc.pos) from None
    if not isinstance(obj, dict):
        raise SchemaViolation("judge payload must be an object")
    for key in obj:
        if key not in _JUDGE_FIELDS:
            raise SchemaViolation(f"unknown judge field {key!r}",
                                  position=max(raw_text.find(f'"{key}"'), 0))
    for score_key in ("persona_score", "empathy_score"):
        score = obj.get(score_key)
        if not isinstance(score, int) or isinstance(score, bool) or not 1 <= score <= 5:
            raise SchemaViolation(f"{score_key} must be an integer in [1,5], got {score!r}")
    if not isinstance(obj.get("fidelity_hit"), bool):
        raise SchemaViolation("fidelity_hit must be a boolean")
    if not isinstance(obj.get("reasoning"), str):
        raise SchemaViolation("reasoning must be a string")
    return obj


# -- curation ----------------------------------------------------------------------------


def curate(episodes: Sequence[Episode], verdicts: Sequence[JudgeVerdict],
           sample_rate: float, seed: int = 7,
           sentiment_threshold: float = 0.0) -> dict[str, list[Episode]]:
    """Silver = all three criteria pass; gold candidates = seeded sample of
    silver at the given rate, flagged for human verification."""
    if len(episodes) != len(verdicts):
        raise ValueError("need one verdict per episode")
    silver = [ep for ep, v in zip(episodes, verdicts) if v.passes(sentiment_threshold)]
    count = math.floor(len(silver) * sample_rate + 0.5)
    rng = random.Random(seed)
    gold = rng.sample(silver, count) if count else []
    return {"silver": silver, "gold_candidates": gold}


def apply_gold_reviews(gold_candidates: Sequence[Episode],
                       reviews: Mapping[str, bool]) -> list[Episode]:
    """Import path for human reviewer verdicts over gold candidates."""
    return [ep for ep in gold_candidates if reviews.get(ep.episode_id, False)]


# -- context folding -----------------------------------------------------------------------


@dataclass
class FoldedBranch:
    branch_id: str
    summary: str
    archive_ref: tuple[int, int]  # (offset, length) in the archive file
    original_tokens: int
    folded_tokens: int


class Archive:
    """Append-only binary-safe log addressed by (offset, length) locators."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            self.path.write_bytes(b"")

    def append(self, data: bytes) -> tuple[int, int]:
        with self.path.open("ab") as fh:
            offset = fh.tell()
            fh.write(data)
        return offset, len(data)

    def read(self, offset: int, length: int) -> bytes:
        with self.path.open("rb") as fh:
            fh.seek(offset)
            return fh.read(length)


_FOLD_MARK = re.compile(r"^\[folded@(\d+)\+(\d+)\]")


def fold(item: TraceItem, token_cap: int, archive: Archive) -> FoldedBranch | None:
    """Fold one verbose working-memory branch into a capped summary plus an
    archive locator. Under-cap and already-folded branches are left alone."""
    if item.folded or item.token_estimate <= token_cap:
        return None
    raw = item.payload.encode("utf-8")
    offset, length = archive.append(raw)
    # the marker counts as one word, so the summary keeps cap//1.3 - 1 words
    max_words = max(1, math.floor(token_cap / 1.3)) - 1
    summary = " ".join(item.payload.split()[:max_words])
    branch = FoldedBranch(
        branch_id=f"{item.task_id}:{item.step_id}",
        summary=summary,
        archive_ref=(offset, length),
        original_tokens=item.token_estimate,
        folded_tokens=0,
    )
    item.payload = f"[folded@{offset}+{length}] {summary}"
    item.folded = True
    item.token_estimate = token_estimate(item.payload)
    branch.folded_tokens = item.token_estimate
    return branch


def unfold(archive: Archive, ref: tuple[int, int] | str) -> str:
    """Recover the byte-identical original branch from the archive."""
    if isinstance(ref, str):
        m = _FOLD_MARK.match(ref)
        if not m:
            raise EngineError(f"not a folded payload: {ref[:40]!r}")
        ref = (int(m.group(1)), int(m.group(2)))
    offset, length = ref
    return archive.read(offset, length).decode("utf-8")


def fold_working_memory(session: SessionState, token_cap: int,
                        archive: Archive) -> list[FoldedBranch]:
    folded = []
    for item in session.working_memory:
        branch = fold(item, token_cap, archive)
        if branch is not None:
            folded.append(branch)
    return folded


# -- distillation ----------------------------------------------------------------------------

_P_DISLIKE = re.compile(r"\bi (?:really )?(?:dislike|hate)\s+([\w ]+?)(?:[.,!?]|$)")
_P_PREFER = re.compile(r"\bi prefer\s+([\w ]+?)(?:[.,!?]|$)")
_P_IS_A = re.compile(r"\bi(?:'m| am)\s+(?:a|an)\s+([\w]+)\b")


def distill(episode: Episode, created_at: float = 0.0) -> list[KnowledgeNugget]:
    """Extract preference patterns from user turns and constraint-fusion
    traces; each match becomes a provenance-carrying nugget."""
    statements: list[str] = []
    for text in episode.user_texts():
        lower = text.lower()
        for m in _P_DISLIKE.finditer(lower):
            statements.append(f"User dislikes {m.group(1).strip()}")
        for m in _P_PREFER.finditer(lower):
            statements.append(f"User prefers {m.group(1).strip()}")
        for m in _P_IS_A.finditer(lower):
            statements.append(f"User is a {m.group(1).strip()}")
    for trace in episode.traces:
        for constraint in trace.get("constraints", ()):
            if constraint["kind"] == "dislike":
                statements.append(f"User dislikes {constraint['term']}")
            else:
                statements.append(f"User requires {constraint['term']}")
    nuggets = []
    seen: set[str] = set()
    for statement in statements:
        statement = statement[:200]
        norm = normalize_text(statement)
        if norm in seen:
            continue
        seen.add(norm)
        nuggets.append(KnowledgeNugget(
            nugget_id=f"{episode.episode_id}-n{len(nuggets) + 1}",
            statement=statement,
            scope="user",
            provenance=episode.episode_id,
            created_at=created_at,
        ))
    return nuggets


def commit_nuggets(memory: MemoryStore, user_id: str,
                   nuggets: Iterable[KnowledgeNugget]) -> int:
    accepted = 0
    for nugget in nuggets:
        owner = "user" if nugget.scope == "user" else "agent"
        if memory.commit_nugget(owner, user_id, nugget):
            accepted += 1
    return accepted


# -- SFT export -------------------------------------------------------------------------------


def _dominant_tier(decisions: Sequence[str]) -> int:
    counts = {1: 0, 2: 0, 3: 0}
    for raw in decisions:
        try:
            mode = json.loads(raw).get("mode")
        except json.JSONDecodeError:
            continue
        tier = {"chat": 1, "tool": 2, "agent": 3}.get(mode)
        if tier:
            counts[tier] += 1
    best = max(counts, key=lambda t: (counts[t], t))
    return best if counts[best] else 1


def export_sft(episodes: Sequence[Episode], path: str | Path,
               verdicts: Sequence[JudgeVerdict] | None = None,
               version_label: str = "evo-v1") -> Path:
    """Write newline-delimited training records, one per curated episode,
    stratified as conversation vs collaboration by the dominant tier."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "kind": "header",
            "version": version_label,
            "count": len(episodes),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, episode in enumerate(episodes):
            deliverables = [
                t["content"] for t in episode.turns if t["kind"] == "deliverable"
            ]
            tier = _dominant_tier(episode.routing_decisions)
            record = {
                "kind": "record",
                "episode_id": episode.episode_id,
                "tag": "conversation" if tier == 1 else "collaboration",
                "context": episode.user_texts(),
                "routing": episode.routing_decisions,
                "plan": [
                    [
                        {"step": s["step_id"], "tool": s["tool"], "args": s["args"]}
                        for s in trace.get("steps", ())
                    ]
                    for trace in episode.traces
                ],
                "trace_items": episode.working_memory,
                "deliverable": deliverables[-1] if deliverables else "",
                "verdict": verdicts[i].to_obj() if verdicts else None,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path
