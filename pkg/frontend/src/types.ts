/** Wire types mirrored from the engine's external interfaces. */

export interface TranscriptEntry {
  seq: number;
  role: "user" | "assistant" | "system-integration";
  kind: "turn" | "bridge" | "deliverable" | "clarification" | "progress-note";
  content: string;
  source_event_id: string | null;
  timestamp: number;
}

export type StepState = "pending" | "running" | "done" | "failed" | "skipped";

export interface PlanStep {
  step_id: number;
  tool: string;
  state: StepState;
  started_at: number | null;
  ended_at: number | null;
  summary: string;
}

export interface TaskSnapshot {
  task_id: string;
  session_id: string;
  profile_id: string;
  status: string;
  steps: PlanStep[];
  edges: [number, number][];
  clarification: string | null;
}

export interface StateUpdateEvent {
  event_id: string;
  session_id: string;
  task_id: string;
  kind: "progress" | "artifact" | "clarification" | "final" | "failure";
  payload: unknown;
  causal_seq: number;
  emitted_at: number;
}

export type StreamFrame =
  | { type: "transcript"; entry: TranscriptEntry }
  | ({ type: "plan" } & TaskSnapshot)
  | { type: "event"; event: StateUpdateEvent }
  | { type: "error"; error: string };

export interface RoutingDecisionWire {
  thought: string;
  mode: "chat" | "tool" | "agent";
  routing_target?: string;
  plan?: { step: number; tool: string; args: Record<string, unknown> }[];
}

export interface TurnResponse {
  accepted_at: number;
  turn_id: string;
  routing: RoutingDecisionWire;
}
