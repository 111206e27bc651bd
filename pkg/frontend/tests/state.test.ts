import { describe, expect, it } from "vitest";

import {
  applyEntry,
  applyFrame,
  applyPlan,
  bridgeBeforeDeliverable,
  deliverableBubbles,
  initialState,
  nextFromSeq,
  type ViewState,
} from "../src/state.js";
import type { StreamFrame, TaskSnapshot, TranscriptEntry } from "../src/types.js";

function entry(seq: number, overrides: Partial<TranscriptEntry> = {}): TranscriptEntry {
  return {
    seq,
    role: "assistant",
    kind: "turn",
    content: `entry ${seq}`,
    source_event_id: null,
    timestamp: seq * 10,
    ...overrides,
  };
}

function snapshot(overrides: Partial<TaskSnapshot> = {}): TaskSnapshot {
  return {
    task_id: "t00001",
    session_id: "s1",
    profile_id: "TravelPlanner",
    status: "running",
    steps: [
      { step_id: 1, tool: "flight_search", state: "running", started_at: 0, ended_at: null, summary: "" },
      { step_id: 2, tool: "activity_search", state: "running", started_at: 0, ended_at: null, summary: "" },
      { step_id: 3, tool: "dining_search", state: "pending", started_at: null, ended_at: null, summary: "" },
    ],
    edges: [[1, 3], [2, 3]],
    clarification: null,
    ...overrides,
  };
}

describe("transcript reducer", () => {
  it("keeps entries ordered by seq regardless of arrival order", () => {
    let state = initialState("s1");
    for (const seq of [2, 0, 1]) {
      state = applyEntry(state, entry(seq));
    }
    expect(state.entries.map((e) => e.seq)).toEqual([0, 1, 2]);
    expect(nextFromSeq(state)).toBe(3);
  });

  it("drops duplicate seqs (replay/tail overlap)", () => {
    let state = initialState("s1");
    state = applyEntry(state, entry(0));
    state = applyEntry(state, entry(0));
    expect(state.entries).toHaveLength(1);
    expect(state.droppedDuplicates).toBe(1);
  });

  it("renders each deliverable exactly once per source event", () => {
    let state = initialState("s1");
    state = applyEntry(state, entry(1, { kind: "bridge" }));
    state = applyEntry(
      state, entry(2, { kind: "deliverable", source_event_id: "t00001-e4" }));
    // a buggy replay window re-sends the deliverable under another seq
    state = applyEntry(
      state, entry(5, { kind: "deliverable", source_event_id: "t00001-e4" }));
    expect(deliverableBubbles(state)).toHaveLength(1);
    expect(bridgeBeforeDeliverable(state, "t00001")).toBe(true);
  });

  it("tracks pending clarifications until the user answers", () => {
    let state = initialState("s1");
    state = applyEntry(state, entry(0, { role: "user", content: "find that video" }));
    state = applyEntry(state, entry(1, {
      kind: "clarification",
      content: "which one?",
      source_event_id: "t00001-e2",
    }));
    expect(state.pendingClarification?.question).toBe("which one?");
    expect(state.pendingClarification?.taskId).toBe("t00001");
    state = applyEntry(state, entry(2, { role: "user", content: "the red one" }));
    expect(state.pendingClarification).toBeNull();
  });
});

describe("plan reducer", () => {
  it("node states only move forward", () => {
    let state = initialState("s1");
    state = applyPlan(state, snapshot());
    const regressed = snapshot({
      steps: snapshot().steps.map((s) =>
        s.step_id === 1 ? { ...s, state: "pending" as const } : s),
    });
    state = applyPlan(state, regressed);
    const task = state.tasks.get("t00001")!;
    expect(task.steps.find((s) => s.step_id === 1)!.state).toBe("running");
    const advanced = snapshot({
      steps: snapshot().steps.map((s) =>
        s.step_id === 1 ? { ...s, state: "done" as const, summary: "NH205" } : s),
    });
    state = applyPlan(state, advanced);
    expect(state.tasks.get("t00001")!.steps[0].state).toBe("done");
  });

  it("replaying identical frames reconstructs an identical view", () => {
    const frames: StreamFrame[] = [
      { type: "transcript", entry: entry(0, { role: "user" }) },
      { type: "transcript", entry: entry(1, { kind: "bridge" }) },
      { type: "plan", ...snapshot() },
      {
        type: "transcript",
        entry: entry(2, { kind: "deliverable", source_event_id: "t00001-e9" }),
      },
    ];
    const run = () =>
      frames.reduce((s: ViewState, f) => applyFrame(s, f), initialState("s1"));
    expect(JSON.stringify({ ...run(), tasks: [...run().tasks] })).toEqual(
      JSON.stringify({ ...run(), tasks: [...run().tasks] }));
  });

  it("error frames surface on the state", () => {
    const state = applyFrame(initialState("s1"),
                             { type: "error", error: "bad from_seq" });
    expect(state.error).toBe("bad from_seq");
  });
});
