/** DOM rendering: dialogue panel on the left, per-task plan graphs on the
 * right, a clarification banner that binds the input to the suspended task,
 * and a read-only memory inspector. */

import { layerPlan } from "./layout.js";
import type { ViewState } from "./state.js";
import type { StepState, TaskSnapshot, TranscriptEntry } from "./types.js";

const STATE_COLORS: Record<StepState, string> = {
  pending: "#8888a0",
  running: "#eab308",
  done: "#22c55e",
  failed: "#ef4444",
  skipped: "#64748b",
};

const ROLE_CLASS: Record<string, string> = {
  user: "bubble user",
  assistant: "bubble assistant",
  "system-integration": "bubble system",
};

export function renderTranscript(root: HTMLElement, state: ViewState): void {
  root.replaceChildren();
  for (const entry of state.entries) {
    root.appendChild(renderBubble(entry));
  }
  root.scrollTop = root.scrollHeight;
}

function renderBubble(entry: TranscriptEntry): HTMLElement {
  const bubble = document.createElement("div");
  bubble.className = `${ROLE_CLASS[entry.role] ?? "bubble"} kind-${entry.kind}`;
  bubble.dataset.seq = String(entry.seq);
  if (entry.source_event_id) bubble.dataset.eventId = entry.source_event_id;
  const label = document.createElement("span");
  label.className = "kind-label";
  label.textContent = entry.kind === "turn" ? entry.role : entry.kind;
  const text = document.createElement("pre");
  text.textContent = entry.content;
  bubble.append(label, text);
  return bubble;
}

export function renderPlans(root: HTMLElement, state: ViewState): void {
  root.replaceChildren();
  for (const taskId of state.taskOrder) {
    const task = state.tasks.get(taskId);
    if (task) root.appendChild(renderTaskGraph(task));
  }
}

function renderTaskGraph(task: TaskSnapshot): HTMLElement {
  const card = document.createElement("div");
  card.className = `task-card status-${task.status}`;
  card.dataset.taskId = task.task_id;
  const head = document.createElement("div");
  head.className = "task-head";
  head.textContent = `${task.task_id} · ${task.profile_id} · ${task.status}`;
  card.appendChild(head);

  const grid = document.createElement("div");
  grid.className = "task-grid";
  const positions = layerPlan(task);
  for (const pos of positions) {
    const step = task.steps.find((s) => s.step_id === pos.stepId);
    if (!step) continue;
    const node = document.createElement("div");
    node.className = `step-node state-${step.state}`;
    node.dataset.stepId = String(step.step_id);
    node.style.gridColumn = String(pos.column + 1);
    node.style.gridRow = String(pos.row + 1);
    node.style.borderColor = STATE_COLORS[step.state];
    if (step.state === "running") node.classList.add("pulsing");
    const name = document.createElement("div");
    name.className = "step-tool";
    name.textContent = `${step.step_id}. ${step.tool}`;
    const status = document.createElement("div");
    status.className = "step-state";
    status.textContent = step.state + (step.summary ? ` — ${step.summary}` : "");
    node.append(name, status);
    grid.appendChild(node);
  }
  card.appendChild(grid);
  if (task.edges.length) {
    const edges = document.createElement("div");
    edges.className = "task-edges";
    edges.textContent =
      "deps: " + task.edges.map(([a, b]) => `${a}→${b}`).join("  ");
    card.appendChild(edges);
  }
  return card;
}

export function renderClarification(root: HTMLElement, state: ViewState): void {
  const pending = state.pendingClarification;
  root.classList.toggle("hidden", !pending);
  root.textContent = pending
    ? `Clarification needed${pending.taskId ? ` (${pending.taskId})` : ""}: ${pending.question}`
    : "";
}

export function renderConnection(root: HTMLElement, state: ViewState): void {
  root.dataset.state = state.connection;
  root.classList.toggle("hidden", state.connection === "live");
  root.textContent =
    state.connection === "live" ? "" : `stream ${state.connection}…`;
}

export interface MemoryView {
  profile: Record<string, string>;
  nuggets: string[];
}

export function renderMemory(root: HTMLElement, memory: MemoryView): void {
  root.replaceChildren();
  const title = document.createElement("h3");
  title.textContent = "Memory (read-only)";
  root.appendChild(title);
  const list = document.createElement("ul");
  for (const [key, value] of Object.entries(memory.profile)) {
    const item = document.createElement("li");
    item.textContent = `${key}: ${value}`;
    list.appendChild(item);
  }
  for (const nugget of memory.nuggets) {
    const item = document.createElement("li");
    item.className = "nugget";
    item.textContent = nugget;
    list.appendChild(item);
  }
  root.appendChild(list);
}
