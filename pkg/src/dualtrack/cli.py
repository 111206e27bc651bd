"""Operator entry points: terminal chat, benchmark runs, episode replay,
flywheel execution, corpus export, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import EngineConfig, load_config
from .errors import EngineError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--budget-ms", type=float, default=None, dest="budget_ms")
    parser.add_argument("--perception", choices=["decoupled", "monolithic"], default=None)


def _resolve_config(args: argparse.Namespace) -> EngineConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "budget_ms", None) is not None:
        overrides["ttft_budget_ms"] = args.budget_ms
    if getattr(args, "perception", None):
        overrides["perception_mode"] = args.perception
    if getattr(args, "latency_profile", None):
        overrides["latency_profile"] = args.latency_profile
    return load_config(getattr(args, "config", None), **overrides)


def cmd_chat(args: argparse.Namespace) -> int:
    from .engine import Engine
    from .evolution import EpisodeStore, log_episode
    from .routing import serialize_decision
    from .sim import Scheduler

    config = _resolve_config(args)
    sched = Scheduler()
    engine = Engine(config, sched)
    if args.hobby:
        engine.seed_user_memory(args.user, {"Hobby": args.hobby})
    try:
        session = engine.open_session(args.user, args.persona)
    except EngineError as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 2
    sid = session.session_id
    printed = 0

    def drain() -> None:
        nonlocal printed
        for entry in engine.store.transcript(sid, printed):
            printed = entry.seq + 1
            if entry.role == "user":
                continue
            stamp = f"[{entry.timestamp / 1000:7.2f}s {entry.kind}]"
            print(f"{stamp} {entry.content}")

    print(f"session {sid} (persona: {args.persona}) — /quit to exit")
    decisions = []
    while True:
        try:
            line = input("> ").strip()
        except EOFError:
            line = "/quit"
        if line == "/quit":
            break
        if not line:
            continue
        rec = engine.submit_turn(sid, text=line)
        sched.run_until(lambda: engine.session_quiescent(sid), limit_ms=sched.now + 600_000)
        if rec.decision:
            decisions.append(serialize_decision(rec.decision))
            ttft = rec.ttft_ms()
            note = f"mode={rec.decision.mode}"
            if ttft is not None:
                note += f", first reply {ttft:.0f} ms (budget {config.ttft_budget_ms:.0f})"
            print(f"  ({note})")
        drain()
        if rec.task_id:
            task = engine.tasks[rec.task_id]
            steps = " · ".join(
                f"{s.step_id}.{s.tool} {s.state}" for s in task.graph.steps
            )
            print(f"  [plan {task.task_id} {task.status}] {steps}")
    if printed and args.episodes:
        store = EpisodeStore(args.episodes)
        episode = log_episode(
            engine.store.get(sid), (0, printed),
            traces=[t.to_trace() for t in engine.session_tasks(sid)],
            decisions=decisions,
        )
        store.save(episode)
        print(f"episode logged to {store.root}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    from .bench import format_table, run_bench, write_report_files
    from .corpus import build_default_corpus, load_corpus
    from .errors import CorpusError

    config = _resolve_config(args)
    seed = config.seed if args.seed is None else args.seed
    if args.corpus:
        corpus_path = Path(args.corpus)
        if not corpus_path.exists():
            print(f"corpus file not found: {corpus_path}", file=sys.stderr)
            return 2
        cases = load_corpus(corpus_path)
    else:
        cases = build_default_corpus()
    out_dir = Path(args.out)
    try:
        report, _results = run_bench(
            cases, config, seed,
            episodes_dir=out_dir / "episodes" if args.episodes else None,
        )
    except CorpusError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    paths = write_report_files(report, out_dir, figures=not args.no_figures)
    print(format_table(report))
    print(f"report written to {paths['report']}")
    return 1 if report["violations"] else 0


def cmd_flywheel(args: argparse.Namespace) -> int:
    from .evolution import EpisodeStore, curate, export_sft, judge
    from .tools import build_builtin_registry

    config = _resolve_config(args)
    store = EpisodeStore(args.episodes)
    episodes = store.load_all()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not episodes:
        print("warning: episode store is empty; writing empty outputs", file=sys.stderr)
    version = 1
    while (out_dir / f"evo-v{version}").exists():
        version += 1
    stage_dir = out_dir / f"evo-v{version}"
    stage_dir.mkdir()
    registry = build_builtin_registry()
    verdicts = [judge(ep, registry) for ep in episodes]
    curated = curate(
        episodes, verdicts,
        sample_rate=config.gold_sample_rate,
        seed=config.seed if args.seed is None else args.seed,
        sentiment_threshold=config.sentiment_silver_threshold,
    )
    silver, gold = curated["silver"], curated["gold_candidates"]
    silver_ids = {ep.episode_id for ep in silver}
    sft_path = export_sft(
        silver, stage_dir / "sft.ndjson",
        verdicts=[v for ep, v in zip(episodes, verdicts) if ep.episode_id in silver_ids],
        version_label=f"evo-v{version}",
    )
    (stage_dir / "silver.json").write_text(
        json.dumps([ep.episode_id for ep in silver], indent=2), encoding="utf-8")
    (stage_dir / "gold_candidates.json").write_text(
        json.dumps([
            {"episode_id": ep.episode_id, "needs_human_verification": True}
            for ep in gold
        ], indent=2), encoding="utf-8")
    print(f"stage evo-v{version}: {len(episodes)} episodes -> "
          f"{len(silver)} silver, {len(gold)} gold candidates")
    print(f"sft export: {sft_path}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if not path.exists():
        print(f"no such file: {path}", file=sys.stderr)
        return 2
    if path.suffix == ".json":
        from .evolution import Episode

        episode = Episode.from_obj(json.loads(path.read_text(encoding="utf-8")))
        entries = episode.turns
        print(f"episode {episode.episode_id} "
              f"(sentiment {episode.outcome_signals['user_sentiment']:+.2f})")
    else:
        entries = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()
                   if line.strip()]
    for entry in entries:
        print(f"[{entry['seq']:>3} {entry['timestamp']:>9.1f}ms "
              f"{entry['role']:<18} {entry['kind']:<13}] {entry['content']}")
    return 0


def cmd_corpus(args: argparse.Namespace) -> int:
    from .corpus import build_default_corpus, dump_corpus

    cases = build_default_corpus()
    path = dump_corpus(cases, args.out)
    print(f"{len(cases)} cases written to {path}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    config = _resolve_config(args)
    serve(config, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualtrack",
        description="dual-track conversation engine: chat, bench, flywheel, serve",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_chat = sub.add_parser("chat", help="interactive terminal chat (virtual clock)")
    _add_common(p_chat)
    p_chat.add_argument("--user", default="operator")
    p_chat.add_argument("--persona", default="companion")
    p_chat.add_argument("--hobby", help="seed the user profile's Hobby field")
    p_chat.add_argument("--episodes", help="episode store dir to log into on /quit")
    p_chat.set_defaults(fn=cmd_chat)

    p_bench = sub.add_parser("bench", help="run the benchmark corpus and write a report")
    _add_common(p_bench)
    p_bench.add_argument("--corpus", help="corpus JSON (defaults to the bundled 200 cases)")
    p_bench.add_argument("--out", default="bench-out")
    p_bench.add_argument("--latency-profile", choices=["default", "heavy"],
                         default=None, dest="latency_profile")
    p_bench.add_argument("--episodes", action="store_true",
                         help="also log per-case episodes under <out>/episodes")
    p_bench.add_argument("--no-figures", action="store_true")
    p_bench.set_defaults(fn=cmd_bench)

    p_fly = sub.add_parser("flywheel", help="judge, curate, and export an episode store")
    _add_common(p_fly)
    p_fly.add_argument("--episodes", required=True)
    p_fly.add_argument("--out", default="flywheel-out")
    p_fly.set_defaults(fn=cmd_flywheel)

    p_replay = sub.add_parser("replay", help="print a session log or episode file")
    p_replay.add_argument("path")
    p_replay.set_defaults(fn=cmd_replay)

    p_corpus = sub.add_parser("corpus", help="write the bundled corpus to a JSON file")
    p_corpus.add_argument("--out", default="corpus.json")
    p_corpus.set_defaults(fn=cmd_corpus)

    p_serve = sub.add_parser("serve", help="run the HTTP service (wall clock)")
    _add_common(p_serve)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8787)
    p_serve.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
