"""Virtual-clock benchmark runner and report assembly.

Each case replays on a fresh engine and scheduler seeded from (master seed,
case id), so reports are byte-identical across runs with the same seed. The
report path writes the JSON report, a per-case CSV, a human-readable table,
and (optionally) rendered figures.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .config import EngineConfig
from .corpus import BenchmarkCase, validate_corpus
from .engine import Engine
from .evolution import EpisodeStore, log_episode
from .metrics import case_success, dispatch_precision, response_hit
from .perception import ModalityPayload
from .sim import Scheduler
from .util import derive_seed, percentile

_TURN_LIMIT_MS = 600_000.0


@dataclass
class TurnOutcome:
    mode_got: str
    mode_gt: str
    ttft_ms: float | None
    e2e_ms: float | None
    perception_ms: float
    fallback_fired: bool
    task_status: str | None = None


@dataclass
class CaseResult:
    case_id: str
    tags: list[str]
    turns: list[TurnOutcome] = field(default_factory=list)
    invocations: list[tuple[str, dict]] = field(default_factory=list)
    assistant_text: str = ""
    sr_ok: bool | None = None
    fidelity_ok: bool | None = None
    traces: list[dict] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    def dispatch_hits(self) -> tuple[int, int]:
        hits = sum(1 for t in self.turns if t.mode_got == t.mode_gt)
        return hits, len(self.turns)


def run_case(case: BenchmarkCase, config: EngineConfig, master_seed: int,
             episode_store: EpisodeStore | None = None) -> CaseResult:
    sched = Scheduler()
    cfg = config.replace(seed=derive_seed(master_seed, case.case_id), log_dir="")
    engine = Engine(cfg, sched)
    if case.memory_seed:
        engine.seed_user_memory(
            case.user_id,
            profile=case.memory_seed.get("profile"),
            history=case.memory_seed.get("history", ()),
        )
    session = engine.open_session(case.user_id, case.persona_id)
    sid = session.session_id
    result = CaseResult(case_id=case.case_id, tags=list(case.tags))

    records = []
    for turn in case.turns:
        payloads = [ModalityPayload("text", turn.text)]
        if turn.video:
            payloads.append(ModalityPayload("video", [turn.video]))
        rec = engine.submit_turn(sid, payloads=payloads)
        records.append((turn, rec))
        settled = sched.run_until(
            lambda: engine.session_quiescent(sid),
            limit_ms=sched.now + _TURN_LIMIT_MS,
        )
        if not settled:
            result.violations.append(f"turn did not settle within {_TURN_LIMIT_MS} ms")
        # idle think-time before the next scripted turn
        sched.run_until(lambda: False, limit_ms=sched.now + cfg.inter_turn_gap_ms)

    for turn, rec in records:
        task_status = None
        if rec.task_id:
            task_status = engine.tasks[rec.task_id].status
        outcome = TurnOutcome(
            mode_got=rec.decision.mode if rec.decision else "chat",
            mode_gt=turn.routing_gt,
            ttft_ms=rec.ttft_ms(),
            e2e_ms=rec.e2e_ms(),
            perception_ms=rec.perception_ms,
            fallback_fired=rec.fallback_fired,
            task_status=task_status,
        )
        result.turns.append(outcome)
        if outcome.ttft_ms is None:
            result.violations.append("turn produced no first assistant entry")
        elif outcome.ttft_ms > cfg.ttft_budget_ms:
            result.violations.append(
                f"TTFT {outcome.ttft_ms:.1f} ms exceeds budget {cfg.ttft_budget_ms} ms"
            )

    transcript = engine.store.transcript(sid)
    result.assistant_text = "\n".join(
        e.content for e in transcript if e.role == "assistant"
    )
    for task in engine.session_tasks(sid):
        result.traces.append(task.to_trace())
        for step in task.graph.steps:
            if step.invoked_args is not None:
                result.invocations.append((step.tool, dict(step.invoked_args)))

    _check_ordering(engine, sid, transcript, result)

    if case.execution_gt is not None:
        variants = [
            [(call["tool"], call["args"]) for call in variant]
            for variant in case.execution_gt
        ]
        result.sr_ok = case_success(result.invocations, variants)
    if case.response_gt is not None:
        result.fidelity_ok = response_hit(result.assistant_text, case.response_gt)

    if episode_store is not None:
        episode = log_episode(
            session, (0, len(transcript)),
            traces=result.traces,
            decisions=[_decision_wire(rec) for _, rec in records if rec.decision],
            episode_id=f"{case.case_id}-w0000-{len(transcript):04d}",
        )
        episode_store.save(episode)
    return result


def _decision_wire(rec) -> str:
    from .routing import serialize_decision

    return serialize_decision(rec.decision)


def _check_ordering(engine: Engine, sid: str, transcript, result: CaseResult) -> None:
    """Bridge-before-deliverable and exactly-once witnesses over the transcript."""
    deliverable_events: dict[str, int] = {}
    for entry in transcript:
        if entry.kind == "deliverable" and entry.source_event_id:
            if entry.source_event_id in deliverable_events:
                result.violations.append(
                    f"duplicate deliverable for event {entry.source_event_id}"
                )
            deliverable_events[entry.source_event_id] = entry.seq
    for rec in engine.turn_records(sid):
        if not rec.task_id:
            continue
        for event_id, seq in deliverable_events.items():
            if event_id.startswith(f"{rec.task_id}-") and rec.first_assistant_seq is not None:
                if seq <= rec.first_assistant_seq:
                    result.violations.append(
                        f"deliverable seq {seq} not after bridge seq {rec.first_assistant_seq}"
                    )


# -- report -----------------------------------------------------------------------------------


def _pct(values: Sequence[float]) -> dict:
    return {
        "p50": percentile(values, 50),
        "p95": percentile(values, 95),
        "p99": percentile(values, 99),
    }


def build_report(cases: Sequence[BenchmarkCase], results: Sequence[CaseResult],
                 config: EngineConfig, seed: int) -> dict:
    undefined: list[str] = []
    modes_got: list[str] = []
    modes_gt: list[str] = []
    unamb_got: list[str] = []
    unamb_gt: list[str] = []
    ttfts: list[float] = []
    e2es: list[float] = []
    e2e_success: list[float] = []
    violations: list[str] = []
    for case, res in zip(cases, results):
        for outcome in res.turns:
            modes_got.append(outcome.mode_got)
            modes_gt.append(outcome.mode_gt)
            if "unambiguous" in case.tags:
                unamb_got.append(outcome.mode_got)
                unamb_gt.append(outcome.mode_gt)
            if outcome.ttft_ms is not None:
                ttfts.append(outcome.ttft_ms)
            if outcome.e2e_ms is not None:
                e2es.append(outcome.e2e_ms)
                if outcome.task_status in (None, "done"):
                    e2e_success.append(outcome.e2e_ms)
        violations.extend(f"{res.case_id}: {v}" for v in res.violations)

    sr_cases = [r for r in results if r.sr_ok is not None]
    fid_cases = [r for r in results if r.fidelity_ok is not None]

    report: dict = {
        "seed": seed,
        "case_count": len(results),
        "turn_count": len(modes_got),
        "config": config.fingerprint(),
        "violations": violations,
    }
    if modes_gt:
        report["p_disp"] = dispatch_precision(modes_got, modes_gt)
    else:
        report["p_disp"] = None
        undefined.append("p_disp")
    if unamb_gt:
        report["p_disp_unambiguous"] = dispatch_precision(unamb_got, unamb_gt)
    else:
        report["p_disp_unambiguous"] = None
        undefined.append("p_disp_unambiguous")
    report["sr"] = (sum(1 for r in sr_cases if r.sr_ok) / len(sr_cases)) if sr_cases else None
    if not sr_cases:
        undefined.append("sr")
    report["fidelity"] = (
        sum(1 for r in fid_cases if r.fidelity_ok) / len(fid_cases) if fid_cases else None
    )
    if not fid_cases:
        undefined.append("fidelity")
    if ttfts and e2es:
        report["latency"] = {"ttft": _pct(ttfts), "e2e": _pct(e2es)}
        report["avg_e2e_ms_all"] = sum(e2es) / len(e2es)
        report["avg_e2e_ms_completed_only"] = (
            sum(e2e_success) / len(e2e_success) if e2e_success else None
        )
    else:
        report["latency"] = None
        report["avg_e2e_ms_all"] = None
        report["avg_e2e_ms_completed_only"] = None
        undefined.append("latency")
    report["undefined"] = undefined
    report["cases"] = [
        {
            "case_id": r.case_id,
            "tags": r.tags,
            "turns": len(r.turns),
            "dispatch_hits": r.dispatch_hits()[0],
            "sr_ok": r.sr_ok,
            "fidelity_ok": r.fidelity_ok,
            "max_ttft_ms": max((t.ttft_ms for t in r.turns if t.ttft_ms is not None),
                               default=None),
            "violations": r.violations,
        }
        for r in results
    ]
    return report


def run_bench(cases: Sequence[BenchmarkCase], config: EngineConfig, seed: int,
              tool_ids: Sequence[str] | None = None,
              episodes_dir: str | Path | None = None) -> tuple[dict, list[CaseResult]]:
    if tool_ids is None:
        from .tools import build_builtin_registry

        tool_ids = build_builtin_registry().tool_ids()
    validate_corpus(cases, tool_ids)
    store = EpisodeStore(episodes_dir) if episodes_dir else None
    results = [run_case(case, config, seed, episode_store=store) for case in cases]
    return build_report(cases, results, config, seed), results


# -- writers --------------------------------------------------------------------------------


def report_json_bytes(report: dict) -> bytes:
    return json.dumps(report, sort_keys=True, indent=2).encode("utf-8")


def write_report_files(report: dict, out_dir: str | Path, figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    report_path = out / "report.json"
    report_path.write_bytes(report_json_bytes(report))
    paths["report"] = report_path
    csv_path = out / "cases.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "tags", "turns", "dispatch_hits", "sr_ok",
                         "fidelity_ok", "max_ttft_ms", "violations"])
        for row in report["cases"]:
            writer.writerow([
                row["case_id"], "|".join(row["tags"]), row["turns"],
                row["dispatch_hits"], row["sr_ok"], row["fidelity_ok"],
                row["max_ttft_ms"], "; ".join(row["violations"]),
            ])
    paths["cases_csv"] = csv_path
    if figures:
        from .figures import render_report_figures

        paths.update(render_report_figures(report, out))
    return paths


def format_table(report: dict) -> str:
    buf = io.StringIO()

    def line(label: str, value) -> None:
        buf.write(f"{label:<28}{value}\n")

    def pct_or_na(value) -> str:
        return f"{value * 100:.1f}%" if value is not None else "n/a"

    line("cases", report["case_count"])
    line("turns", report["turn_count"])
    line("dispatch precision", pct_or_na(report["p_disp"]))
    line("  (unambiguous subset)", pct_or_na(report.get("p_disp_unambiguous")))
    line("success rate", pct_or_na(report["sr"]))
    line("response fidelity", pct_or_na(report["fidelity"]))
    latency = report.get("latency")
    if latency:
        ttft, e2e = latency["ttft"], latency["e2e"]
        line("ttft p50/p95/p99 (ms)",
             f"{ttft['p50']:.0f} / {ttft['p95']:.0f} / {ttft['p99']:.0f}")
        line("e2e p50/p95/p99 (ms)",
             f"{e2e['p50']:.0f} / {e2e['p95']:.0f} / {e2e['p99']:.0f}")
        line("avg e2e all turns (ms)", f"{report['avg_e2e_ms_all']:.0f}")
        completed = report.get("avg_e2e_ms_completed_only")
        line("avg e2e completed (ms)",
             f"{completed:.0f}" if completed is not None else "n/a")
    else:
        line("latency", "n/a (no turns)")
    if report["undefined"]:
        line("undefined metrics", ", ".join(report["undefined"]))
    line("violations", len(report["violations"]))
    for violation in report["violations"][:10]:
        buf.write(f"  ! {violation}\n")
    return buf.getvalue()
