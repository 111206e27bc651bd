/** Console bootstrap: open a session, connect the stream, wire the input. */

import { ApiClient, freshTurnId } from "./api.js";
import {
  applyFrame,
  initialState,
  nextFromSeq,
  type ViewState,
} from "./state.js";
import { StreamConnection } from "./stream.js";
import {
  renderClarification,
  renderConnection,
  renderMemory,
  renderPlans,
  renderTranscript,
} from "./ui.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const baseUrl = params.get("api") ?? "http://127.0.0.1:8787";
  const api = new ApiClient(baseUrl);

  const userId = params.get("user") ?? "console-user";
  const personaId = params.get("persona") ?? "companion";
  const sessionId =
    params.get("session") ?? (await api.openSession(userId, personaId));
  el<HTMLElement>("session-label").textContent = `${sessionId} @ ${baseUrl}`;

  let state: ViewState = initialState(sessionId);
  const transcriptEl = el<HTMLElement>("transcript");
  const plansEl = el<HTMLElement>("plans");
  const clarifyEl = el<HTMLElement>("clarification");
  const bannerEl = el<HTMLElement>("connection");

  const redraw = () => {
    renderTranscript(transcriptEl, state);
    renderPlans(plansEl, state);
    renderClarification(clarifyEl, state);
    renderConnection(bannerEl, state);
  };

  const memoryEl = el<HTMLElement>("memory");
  const refreshMemory = async () => {
    try {
      renderMemory(memoryEl, await api.memory(sessionId));
    } catch {
      /* memory panel is best-effort */
    }
  };
  void refreshMemory();

  const stream = new StreamConnection(baseUrl, sessionId, {
    onFrame: (frame) => {
      state = applyFrame(state, frame);
      redraw();
      if (frame.type === "transcript" && frame.entry.kind === "deliverable") {
        void refreshMemory();
      }
    },
    onStatus: (status) => {
      state = { ...state, connection: status };
      renderConnection(bannerEl, state);
    },
    nextFromSeq: () => nextFromSeq(state),
  });
  stream.start();

  const input = el<HTMLInputElement>("composer-input");
  const send = el<HTMLButtonElement>("composer-send");
  let inflight = false;
  const submit = async () => {
    const text = input.value.trim();
    if (!text || inflight) return;
    inflight = true;
    send.disabled = true;
    try {
      // fresh idempotency key per submission; double-clicks reuse none
      await api.postTurn(sessionId, text, freshTurnId());
      input.value = "";
    } catch (err) {
      bannerEl.classList.remove("hidden");
      bannerEl.textContent = `send failed: ${String(err)}`;
    } finally {
      inflight = false;
      send.disabled = false;
      input.focus();
    }
  };
  send.addEventListener("click", () => void submit());
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") void submit();
  });
  redraw();
}

boot().catch((err) => {
  document.body.textContent = `console failed to start: ${String(err)}`;
});
