/** Server-sent-event stream client with resume-on-reconnect.
 *
 * Built on fetch + ReadableStream so the same code runs in the browser and
 * in Node tests. Reconnects resume from the last transcript seq the consumer
 * acknowledged, so no frame is lost or duplicated across drops.
 */

import type { StreamFrame } from "./types.js";

export interface StreamHandlers {
  onFrame: (frame: StreamFrame) => void;
  onStatus?: (status: "connecting" | "live" | "reconnecting" | "closed") => void;
  /** Must return the next from_seq for a reconnect (last seen seq + 1). */
  nextFromSeq: () => number;
}

export interface StreamOptions {
  initialBackoffMs?: number;
  maxBackoffMs?: number;
}

export class StreamConnection {
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly sessionId: string,
    private readonly handlers: StreamHandlers,
    private readonly options: StreamOptions = {},
  ) {}

  start(): void {
    void this.loop();
  }

  close(): void {
    this.stopped = true;
    this.controller?.abort();
    this.handlers.onStatus?.("closed");
  }

  /** Force-drop the underlying connection; the loop reconnects and resumes. */
  dropForReconnect(): void {
    this.controller?.abort();
  }

  private async loop(): Promise<void> {
    let backoff = this.options.initialBackoffMs ?? 250;
    const maxBackoff = this.options.maxBackoffMs ?? 10_000;
    while (!this.stopped) {
      this.handlers.onStatus?.("connecting");
      try {
        await this.consumeOnce();
        backoff = this.options.initialBackoffMs ?? 250;
      } catch {
        // fall through to the reconnect path
      }
      if (this.stopped) return;
      this.handlers.onStatus?.("reconnecting");
      await sleep(backoff);
      backoff = Math.min(backoff * 2, maxBackoff);
    }
  }

  private async consumeOnce(): Promise<void> {
    this.controller = new AbortController();
    const fromSeq = this.handlers.nextFromSeq();
    const url = `${this.baseUrl}/sessions/${this.sessionId}/stream?from_seq=${fromSeq}`;
    const resp = await fetch(url, {
      signal: this.controller.signal,
      headers: { accept: "text/event-stream" },
    });
    if (!resp.ok || !resp.body) {
      throw new Error(`stream connect failed: ${resp.status}`);
    }
    this.handlers.onStatus?.("live");
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let idx: number;
      while ((idx = buffer.indexOf("\n\n")) >= 0) {
        const chunk = buffer.slice(0, idx);
        buffer = buffer.slice(idx + 2);
        const frame = parseSseChunk(chunk);
        if (frame) this.handlers.onFrame(frame);
      }
    }
  }
}

export function parseSseChunk(chunk: string): StreamFrame | null {
  const dataLines = chunk
    .split("\n")
    .filter((line) => line.startsWith("data: "))
    .map((line) => line.slice("data: ".length));
  if (!dataLines.length) return null; // comment/keepalive
  try {
    return JSON.parse(dataLines.join("\n")) as StreamFrame;
  } catch {
    return null;
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
