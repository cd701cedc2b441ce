// Typed client for the agent API. The stream endpoint is newline-delimited
// JSON over a long-lived fetch; blank lines are keepalives.

import type { EventOutcome, JournalEntry, ModelInfo, StateView } from "./types.js";

export class AgentClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async models(detail = false): Promise<ModelInfo[]> {
    const resp = await fetch(this.url(`/v1/models${detail ? "?detail=true" : ""}`));
    if (!resp.ok) throw new Error(`models: HTTP ${resp.status}`);
    return (await resp.json()) as ModelInfo[];
  }

  async state(uid: string): Promise<StateView> {
    const resp = await fetch(this.url(`/v1/state?uid=${uid}`));
    if (!resp.ok) throw new Error(`state: HTTP ${resp.status}`);
    return (await resp.json()) as StateView;
  }

  async raiseEvent(uid: string, event: string): Promise<EventOutcome> {
    const resp = await fetch(this.url("/v1/events"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ uid, event }),
    });
    if (!resp.ok) throw new Error(`events: HTTP ${resp.status}`);
    return (await resp.json()) as EventOutcome;
  }

  async log(since = 0): Promise<{ entries: JournalEntry[]; latest: number }> {
    const resp = await fetch(this.url(`/v1/log?since=${since}`));
    if (!resp.ok) throw new Error(`log: HTTP ${resp.status}`);
    return (await resp.json()) as { entries: JournalEntry[]; latest: number };
  }

  /** Consume /v1/stream until aborted; resolves when the server ends the stream. */
  async stream(onEntry: (entry: JournalEntry) => void, signal: AbortSignal): Promise<void> {
    const resp = await fetch(this.url("/v1/stream"), { signal });
    if (!resp.ok || resp.body === null) throw new Error(`stream: HTTP ${resp.status}`);
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffered = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffered += decoder.decode(value, { stream: true });
      let nl;
      while ((nl = buffered.indexOf("\n")) >= 0) {
        const line = buffered.slice(0, nl).trim();
        buffered = buffered.slice(nl + 1);
        if (line) onEntry(JSON.parse(line) as JournalEntry);
      }
    }
  }
}
