/** Thin typed client for the engine's HTTP endpoints. */

import type { TaskSnapshot, TranscriptEntry, TurnResponse } from "./types.js";

export interface MemorySeed {
  profile?: Record<string, string>;
  history?: string[];
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      const body = await resp.text();
      throw new Error(`${init?.method ?? "GET"} ${path} -> ${resp.status}: ${body}`);
    }
    return (await resp.json()) as T;
  }

  healthz(): Promise<{ ok: boolean }> {
    return this.request("/healthz");
  }

  async openSession(userId: string, personaId: string,
                    memorySeed?: MemorySeed): Promise<string> {
    const body = await this.request<{ session_id: string }>("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        user_id: userId,
        persona_id: personaId,
        memory_seed: memorySeed,
      }),
    });
    return body.session_id;
  }

  /** Each submission must ship a fresh client_turn_id; retries reuse it. */
  postTurn(sessionId: string, text: string, clientTurnId: string): Promise<TurnResponse> {
    return this.request(`/sessions/${sessionId}/turns`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text, client_turn_id: clientTurnId }),
    });
  }

  transcript(sessionId: string, fromSeq = 0): Promise<TranscriptEntry[]> {
    return this.request(`/sessions/${sessionId}/transcript?from_seq=${fromSeq}`);
  }

  plan(sessionId: string): Promise<{ tasks: TaskSnapshot[] }> {
    return this.request(`/sessions/${sessionId}/plan`);
  }

  memory(sessionId: string): Promise<{ profile: Record<string, string>; nuggets: string[] }> {
    return this.request(`/sessions/${sessionId}/memory`);
  }
}

export function freshTurnId(): string {
  const c = globalThis.crypto as Crypto | undefined;
  if (c?.randomUUID) return c.randomUUID();
  return `turn-${Date.now()}-${Math.floor(Math.random() * 1e9)}`;
}
