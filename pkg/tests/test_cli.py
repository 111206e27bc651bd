"""CLI surface: every command is scriptable and exits nonzero on failure."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from dualtrack.cli import main
from dualtrack.corpus import build_default_corpus, dump_corpus


@pytest.fixture(scope="module")
def small_corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "small.json"
    cases = build_default_corpus()
    picked = cases[:4] + [c for c in cases if "ambiguous" in c.tags][:1] \
        + [c for c in cases if "trip" in c.case_id][:2]
    dump_corpus(picked, path)
    return path


def test_corpus_dump(tmp_path, capsys):
    out = tmp_path / "corpus.json"
    assert main(["corpus", "--out", str(out)]) == 0
    assert "200 cases" in capsys.readouterr().out
    assert len(json.loads(out.read_text())) == 200


def test_bench_writes_report_and_exits_zero(tmp_path, small_corpus_file, capsys):
    out = tmp_path / "bench"
    code = main(["bench", "--corpus", str(small_corpus_file), "--seed", "42",
                 "--out", str(out), "--episodes"])
    assert code == 0
    assert (out / "report.json").exists()
    assert (out / "cases.csv").exists()
    assert (out / "quality_metrics.png").exists()
    assert (out / "latency_percentiles.png").exists()
    assert list((out / "episodes").glob("*.json"))
    assert "dispatch precision" in capsys.readouterr().out


def test_bench_seed_repeat_identical_report(tmp_path, small_corpus_file):
    out1, out2 = tmp_path / "b1", tmp_path / "b2"
    assert main(["bench", "--corpus", str(small_corpus_file), "--seed", "7",
                 "--out", str(out1), "--no-figures"]) == 0
    assert main(["bench", "--corpus", str(small_corpus_file), "--seed", "7",
                 "--out", str(out2), "--no-figures"]) == 0
    assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()


def test_bench_missing_corpus_is_usage_error(tmp_path, capsys):
    code = main(["bench", "--corpus", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x")])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_flywheel_versions_successive_runs(tmp_path, small_corpus_file, capsys):
    bench_out = tmp_path / "bench"
    main(["bench", "--corpus", str(small_corpus_file), "--out", str(bench_out),
          "--episodes", "--no-figures"])
    fly_out = tmp_path / "fly"
    assert main(["flywheel", "--episodes", str(bench_out / "episodes"),
                 "--out", str(fly_out), "--seed", "7"]) == 0
    assert main(["flywheel", "--episodes", str(bench_out / "episodes"),
                 "--out", str(fly_out), "--seed", "7"]) == 0
    assert (fly_out / "evo-v1" / "sft.ndjson").exists()
    assert (fly_out / "evo-v2" / "sft.ndjson").exists()
    out = capsys.readouterr().out
    assert "silver" in out
    header = json.loads((fly_out / "evo-v1" / "sft.ndjson").read_text().splitlines()[0])
    assert header["version"] == "evo-v1" and header["count"] > 0


def test_flywheel_empty_store_warns(tmp_path, capsys):
    empty = tmp_path / "episodes"
    empty.mkdir()
    assert main(["flywheel", "--episodes", str(empty), "--out", str(tmp_path / "o")]) == 0
    assert "empty" in capsys.readouterr().err


def test_replay_prints_session_log(tmp_path, small_corpus_file, capsys):
    bench_out = tmp_path / "bench"
    main(["bench", "--corpus", str(small_corpus_file), "--out", str(bench_out),
          "--episodes", "--no-figures"])
    episode = next((bench_out / "episodes").glob("*.json"))
    assert main(["replay", str(episode)]) == 0
    out = capsys.readouterr().out
    assert "episode" in out and "turn" in out


def test_replay_missing_file_errors(tmp_path, capsys):
    assert main(["replay", str(tmp_path / "ghost.jsonl")]) == 2


def test_config_file_and_flag_precedence(tmp_path, small_corpus_file):
    config = tmp_path / "engine.cfg"
    config.write_text("ttft_budget_ms = 750\nresponder_latency_ms = 5\n")
    out = tmp_path / "bench"
    assert main(["bench", "--corpus", str(small_corpus_file), "--config", str(config),
                 "--budget-ms", "600", "--out", str(out), "--no-figures"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["ttft_budget_ms"] == 600.0  # flag overrides file
    assert report["config"]["responder_latency_ms"] == 5.0


def test_chat_subprocess_quits_cleanly(tmp_path):
    episodes = tmp_path / "episodes"
    proc = subprocess.run(
        [sys.executable, "-m", "dualtrack.cli", "chat", "--hobby", "Basketball",
         "--episodes", str(episodes)],
        input="hello there\nplan a trip to Tokyo\n/quit\n",
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    assert "mode=chat" in proc.stdout
    assert "mode=agent" in proc.stdout
    assert "bridge" in proc.stdout
    assert "deliverable" in proc.stdout
    assert list(episodes.glob("*.json"))


def test_unknown_config_key_fails(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("no_such_key = 1\n")
    code = main(["bench", "--config", str(config), "--out", str(tmp_path / "o"),
                 "--no-figures"])
    assert code == 1
    assert "no_such_key" in capsys.readouterr().err
