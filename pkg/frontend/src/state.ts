/** Pure view-state reducer.
 *
 * The console derives everything from stream frames plus the GET endpoints,
 * so replaying the same frames always reconstructs the identical view:
 * transcript bubbles ordered by seq, each deliverable rendered exactly once,
 * and plan nodes whose states only ever move forward.
 */

import type {
  PlanStep,
  StepState,
  StreamFrame,
  TaskSnapshot,
  TranscriptEntry,
} from "./types.js";

const STATE_RANK: Record<StepState, number> = {
  pending: 0,
  running: 1,
  done: 2,
  failed: 2,
  skipped: 2,
};

export interface PendingClarification {
  question: string;
  seq: number;
  taskId: string | null;
}

export interface ViewState {
  sessionId: string;
  entries: TranscriptEntry[];
  tasks: Map<string, TaskSnapshot>;
  taskOrder: string[];
  pendingClarification: PendingClarification | null;
  lastSeq: number;
  connection: string;
  droppedDuplicates: number;
  error: string | null;
}

export function initialState(sessionId: string): ViewState {
  return {
    sessionId,
    entries: [],
    tasks: new Map(),
    taskOrder: [],
    pendingClarification: null,
    lastSeq: -1,
    connection: "connecting",
    droppedDuplicates: 0,
    error: null,
  };
}

export function applyFrame(state: ViewState, frame: StreamFrame): ViewState {
  switch (frame.type) {
    case "transcript":
      return applyEntry(state, frame.entry);
    case "plan":
      return applyPlan(state, frame);
    case "event":
      return state; // raw event frames carry no extra view state
    case "error":
      return { ...state, error: frame.error };
  }
}

export function applyEntry(state: ViewState, entry: TranscriptEntry): ViewState {
  if (state.entries.some((e) => e.seq === entry.seq)) {
    return { ...state, droppedDuplicates: state.droppedDuplicates + 1 };
  }
  if (
    entry.kind === "deliverable" &&
    entry.source_event_id &&
    state.entries.some((e) => e.source_event_id === entry.source_event_id)
  ) {
    // render-once guard: a deliverable bubble per source event
    return { ...state, droppedDuplicates: state.droppedDuplicates + 1 };
  }
  const entries = [...state.entries, entry].sort((a, b) => a.seq - b.seq);
  let pending = state.pendingClarification;
  if (entry.kind === "clarification") {
    pending = {
      question: entry.content,
      seq: entry.seq,
      taskId: entry.source_event_id ? entry.source_event_id.split("-e")[0] : null,
    };
  } else if (pending && entry.role === "user" && entry.seq > pending.seq) {
    pending = null; // the user's next turn answers it
  }
  return {
    ...state,
    entries,
    pendingClarification: pending,
    lastSeq: Math.max(state.lastSeq, entry.seq),
  };
}

export function applyPlan(state: ViewState, snapshot: TaskSnapshot): ViewState {
  const previous = state.tasks.get(snapshot.task_id);
  const steps: PlanStep[] = snapshot.steps.map((incoming) => {
    const before = previous?.steps.find((s) => s.step_id === incoming.step_id);
    if (before && STATE_RANK[incoming.state] < STATE_RANK[before.state]) {
      return before; // node states never move backwards
    }
    return incoming;
  });
  const tasks = new Map(state.tasks);
  tasks.set(snapshot.task_id, { ...snapshot, steps });
  const taskOrder = state.taskOrder.includes(snapshot.task_id)
    ? state.taskOrder
    : [...state.taskOrder, snapshot.task_id];
  return { ...state, tasks, taskOrder };
}

export function deliverableBubbles(state: ViewState): TranscriptEntry[] {
  return state.entries.filter((e) => e.kind === "deliverable");
}

export function bridgeBeforeDeliverable(state: ViewState, taskId: string): boolean {
  const deliverable = state.entries.find(
    (e) => e.kind === "deliverable" && e.source_event_id?.startsWith(`${taskId}-`),
  );
  if (!deliverable) return false;
  return state.entries.some((e) => e.kind === "bridge" && e.seq < deliverable.seq);
}

export function nextFromSeq(state: ViewState): number {
  return state.lastSeq + 1;
}
