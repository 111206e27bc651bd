"""Data flywheel: episode logging, judging, curation, folding, distillation,
and the SFT export format."""

from __future__ import annotations

import json

import pytest

from conftest import settle
from dualtrack.config import EngineConfig
from dualtrack.engine import Engine
from dualtrack.errors import EngineError, SchemaViolation
from dualtrack.evolution import (
    Archive,
    Episode,
    EpisodeStore,
    JudgeVerdict,
    apply_gold_reviews,
    commit_nuggets,
    curate,
    distill,
    export_sft,
    fold,
    fold_working_memory,
    judge,
    log_episode,
    sentiment_score,
    unfold,
    validate_judge_payload,
)
from dualtrack.sim import Scheduler
from dualtrack.state import TraceItem
from dualtrack.tools import build_builtin_registry
from dualtrack.util import token_estimate


def run_session(turns, config=None, memory=None):
    engine = Engine(config or EngineConfig(), Scheduler())
    if memory:
        engine.seed_user_memory("u1", memory.get("profile"), memory.get("history", ()))
    sid = engine.open_session("u1", "companion").session_id
    decisions = []
    for text in turns:
        rec = engine.submit_turn(sid, text=text)
        assert settle(engine, sid)
        from dualtrack.routing import serialize_decision

        decisions.append(serialize_decision(rec.decision))
    session = engine.store.get(sid)
    traces = [t.to_trace() for t in engine.session_tasks(sid)]
    return engine, session, traces, decisions


def make_episode(turns=("hello", "great, thanks!"), **kwargs):
    engine, session, traces, decisions = run_session(list(turns), **kwargs)
    episode = log_episode(session, (0, len(session.transcript)), traces, decisions)
    return engine, episode


def test_log_episode_deterministic_bytes():
    _, session, traces, decisions = run_session(["hello", "great, thanks!"])
    window = (0, len(session.transcript))
    first = log_episode(session, window, traces, decisions)
    second = log_episode(session, window, traces, decisions)
    # oracle: byte diff
    assert first.to_bytes() == second.to_bytes()


def test_log_episode_empty_window_errors():
    _, session, traces, decisions = run_session(["hello"])
    with pytest.raises(EngineError):
        log_episode(session, (5, 5), traces, decisions)


def test_log_episode_rejects_foreign_traces():
    _, session, traces, decisions = run_session(["hello"])
    with pytest.raises(EngineError):
        log_episode(session, (0, 2), [{"session_id": "other"}], decisions)


def test_mixed_episode_captures_trace_and_outcome_signals():
    engine, episode = make_episode(
        ("I'm exhausted... Plan a trip to Tokyo.", "great, book it!"),
        memory={"profile": {"Hobby": "Basketball"}, "history": ["Dislikes raw fish"]},
    )
    assert episode.outcome_signals["followed_up"] is True
    user_turns = [t for t in episode.turns if t["role"] == "user"]
    assert len(user_turns) == 2
    assert len(episode.traces) == 1
    assert len(episode.traces[0]["steps"]) >= 3
    kinds = [t["kind"] for t in episode.turns]
    assert "bridge" in kinds and "deliverable" in kinds


def test_minimal_greeting_episode():
    _, episode = make_episode(("hello",))
    assert len(episode.turns) == 2  # user turn + direct reply


def test_episode_store_round_trip(tmp_path):
    _, episode = make_episode()
    store = EpisodeStore(tmp_path)
    path = store.save(episode)
    assert path.exists()
    loaded = store.load_all()
    assert len(loaded) == 1
    assert loaded[0].to_bytes() == episode.to_bytes()


# -- judge ----------------------------------------------------------------------------


def test_judge_positive_follow_up():
    _, episode = make_episode(("what's the weather in Paris", "great, thanks!"))
    verdict = judge(episode, build_builtin_registry())
    assert verdict.engagement is True
    assert verdict.compliance is True
    assert verdict.sentiment > 0


def test_judge_terminal_follow_up_is_not_engaged():
    _, episode = make_episode(("hello", "bye"))
    verdict = judge(episode)
    assert verdict.engagement is False


def test_judge_flags_tool_outside_declared_plan():
    _, episode = make_episode(("what's the weather in Paris", "thanks"))
    verdict = judge(episode, allowed_tools={"calendar"})
    assert verdict.compliance is False
    assert "weather" in verdict.reasoning


def test_judge_flags_schema_invalid_args():
    _, episode = make_episode(("what's the weather in Paris", "thanks"))
    episode.traces[0]["steps"][0]["invoked_args"] = {"bogus": 1}
    verdict = judge(episode, build_builtin_registry())
    assert verdict.compliance is False


def test_sentiment_lexicon_scoring():
    assert sentiment_score(["great, thanks!"]) == 1.0
    assert sentiment_score(["this is terrible and wrong"]) == -1.0
    assert sentiment_score(["exhausted... but great trip, thanks"]) == pytest.approx(1 / 3)
    assert sentiment_score(["neutral words only"]) == 0.0


def test_model_judge_schema_accepts_reference_payload():
    payload = validate_judge_payload(
        '{"persona_score":5,"empathy_score":4,"fidelity_hit":true,"reasoning":"..."}'
    )
    assert payload["fidelity_hit"] is True


@pytest.mark.parametrize("raw", [
    '{"persona_score":6,"empathy_score":4,"fidelity_hit":true,"reasoning":""}',
    '{"persona_score":5,"empathy_score":4,"fidelity_hit":"yes","reasoning":""}',
    '{"persona_score":5,"empathy_score":4,"fidelity_hit":true,"reasoning":"","extra":1}',
    '{"persona_score":5}',
    'not json',
])
def test_model_judge_schema_rejects_bad_payloads(raw):
    with pytest.raises(SchemaViolation):
        validate_judge_payload(raw)


# -- curate ------------------------------------------------------------------------------


def fake_episode(i: int) -> Episode:
    return Episode(
        episode_id=f"ep-{i:03d}", session_id=f"s{i}",
        turns=[{"seq": 0, "role": "user", "kind": "turn", "content": "hi",
                "source_event_id": None, "timestamp": 0.0}],
        traces=[], routing_decisions=['{"thought": "", "mode": "chat"}'],
        outcome_signals={"followed_up": True, "user_sentiment": 0.5, "corrections": 0},
    )


def verdict(ok: bool) -> JudgeVerdict:
    return JudgeVerdict(engagement=ok, compliance=ok, sentiment=0.5 if ok else -0.5,
                        reasoning="")


def test_curate_six_of_ten_rate_half_seed_seven():
    episodes = [fake_episode(i) for i in range(10)]
    verdicts = [verdict(i < 6) for i in range(10)]
    out = curate(episodes, verdicts, sample_rate=0.5, seed=7)
    assert len(out["silver"]) == 6
    # oracle: seeded sampler replay
    import random as _random

    expected = _random.Random(7).sample(out["silver"], 3)
    assert out["gold_candidates"] == expected
    assert len(out["gold_candidates"]) == 3


def test_curate_all_failing_yields_empty_sets():
    episodes = [fake_episode(i) for i in range(4)]
    verdicts = [verdict(False)] * 4
    out = curate(episodes, verdicts, sample_rate=0.5, seed=7)
    assert out["silver"] == [] and out["gold_candidates"] == []


def test_curate_silver_is_three_predicate_conjunction():
    episodes = [fake_episode(i) for i in range(3)]
    verdicts = [
        JudgeVerdict(True, True, 0.0, ""),    # passes at threshold 0
        JudgeVerdict(True, False, 0.9, ""),   # compliance fails
        JudgeVerdict(False, True, 0.9, ""),   # engagement fails
    ]
    out = curate(episodes, verdicts, sample_rate=1.0, seed=1)
    assert [ep.episode_id for ep in out["silver"]] == ["ep-000"]


def test_gold_review_import_path():
    episodes = [fake_episode(i) for i in range(4)]
    reviews = {"ep-000": True, "ep-001": False}
    assert [ep.episode_id for ep in apply_gold_reviews(episodes, reviews)] == ["ep-000"]


# -- folding ------------------------------------------------------------------------------


def test_fold_caps_tokens_and_unfolds_byte_identical(tmp_path):
    archive = Archive(tmp_path / "archive.bin")
    payload = " ".join(f"tok{i}" for i in range(693))  # 693 words -> 901 tokens
    item = TraceItem("t1", "1", payload, token_estimate(payload))
    assert item.token_estimate > 900 - 1
    branch = fold(item, token_cap=60, archive=archive)
    assert branch is not None
    assert branch.folded_tokens <= 60
    assert branch.original_tokens == token_estimate(payload)
    assert item.folded and item.payload.startswith("[folded@")
    # oracle: round-trip diff
    assert unfold(archive, branch.archive_ref) == payload
    assert unfold(archive, item.payload) == payload


def test_fold_under_cap_is_identity(tmp_path):
    archive = Archive(tmp_path / "archive.bin")
    item = TraceItem("t1", "1", "short payload", token_estimate("short payload"))
    assert fold(item, token_cap=60, archive=archive) is None
    assert not item.folded and item.payload == "short payload"


def test_fold_already_folded_is_noop(tmp_path):
    archive = Archive(tmp_path / "archive.bin")
    payload = "word " * 200
    item = TraceItem("t1", "1", payload, token_estimate(payload))
    fold(item, 60, archive)
    state = (item.payload, item.token_estimate)
    assert fold(item, 60, archive) is None
    assert (item.payload, item.token_estimate) == state


def test_fold_working_memory_reduces_total(tmp_path):
    archive = Archive(tmp_path / "archive.bin")
    _, session, _, _ = run_session(["plan a trip to Kyoto"])
    big = " ".join(f"err{i}" for i in range(700))
    session.working_memory.append(TraceItem("t9", "1", big, token_estimate(big)))
    before = sum(item.token_estimate for item in session.working_memory)
    folded = fold_working_memory(session, token_cap=60, archive=archive)
    after = sum(item.token_estimate for item in session.working_memory)
    assert folded and after < before


# -- distillation ---------------------------------------------------------------------------


def test_distill_constraint_trace_yields_provenance_nugget():
    engine, episode = make_episode(
        ("I'm exhausted... Plan a trip to Tokyo.", "great, book it!"),
        memory={"profile": {"Hobby": "Basketball"}, "history": ["Dislikes raw fish"]},
    )
    nuggets = distill(episode)
    statements = [n.statement for n in nuggets]
    assert "User dislikes raw fish" in statements
    nugget = nuggets[statements.index("User dislikes raw fish")]
    assert nugget.provenance == episode.episode_id
    assert nugget.scope == "user"
    accepted = commit_nuggets(engine.memory, "u1", nuggets)
    assert accepted == len(nuggets)
    # provenance episode contains the matched constraint term
    assert any("raw fish" in json.dumps(t) for t in episode.traces)


def test_distill_preference_patterns_from_user_turns():
    _, episode = make_episode(("I prefer visual data over text, by the way", "thanks"))
    statements = [n.statement for n in distill(episode)]
    assert "User prefers visual data over text" in statements
    _, ep2 = make_episode(("I am a vegetarian, remember that", "thanks"))
    assert "User is a vegetarian" in [n.statement for n in distill(ep2)]


def test_distill_chitchat_only_is_empty():
    _, episode = make_episode(("hello there", "nice day!"))
    assert distill(episode) == []


# -- export ------------------------------------------------------------------------------------


def test_export_six_records_with_stratification(tmp_path):
    episodes = []
    for i in range(6):
        ep = fake_episode(i)
        if i % 2 == 0:
            ep.routing_decisions = ['{"thought": "", "mode": "agent", '
                                    '"routing_target": "TravelPlanner"}']
        episodes.append(ep)
    path = export_sft(episodes, tmp_path / "sft.ndjson",
                      verdicts=[verdict(True)] * 6, version_label="evo-v1")
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    header, records = lines[0], lines[1:]
    assert header == {"kind": "header", "version": "evo-v1", "count": 6}
    assert len(records) == 6
    tags = [r["tag"] for r in records]
    assert tags.count("collaboration") == 3 and tags.count("conversation") == 3
    assert all(r["verdict"]["engagement"] for r in records)


def test_export_empty_set_writes_header_only(tmp_path):
    path = export_sft([], tmp_path / "sft.ndjson", version_label="evo-v2")
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["count"] == 0


def test_export_keeps_folded_trace_items(tmp_path):
    archive = Archive(tmp_path / "archive.bin")
    engine, session, traces, decisions = run_session(["plan a trip to Kyoto", "thanks!"])
    big = " ".join(f"blob{i}" for i in range(700))
    session.working_memory.append(TraceItem("t9", "1", big, token_estimate(big)))
    fold_working_memory(session, 60, archive)
    episode = log_episode(session, (0, len(session.transcript)), traces, decisions)
    path = export_sft([episode], tmp_path / "sft.ndjson")
    record = json.loads(path.read_text().splitlines()[1])
    folded_items = [item for item in record["trace_items"] if item["folded"]]
    assert folded_items and folded_items[0]["payload"].startswith("[folded@")
