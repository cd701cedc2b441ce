// Live view of one agent: initial snapshot, stream subscription with
// reconnect, periodic state resync, staleness tracking. Holds no statechart
// logic of its own; every state string comes verbatim from the agent.

import { AgentClient } from "./api.js";
import type {
  CommInfo,
  FallbackAlert,
  JournalEntry,
  ModelInfo,
  StateView,
} from "./types.js";

export interface MonitorHooks {
  onModels?(models: ModelInfo[]): void;
  onState?(view: StateView): void;
  onComm?(comm: CommInfo): void;
  onFallback?(alert: FallbackAlert): void;
  onLog?(entry: JournalEntry): void;
  onConnection?(up: boolean): void;
}

export interface MonitorOptions {
  resyncMs?: number;
  backoffMs?: number;
  maxBackoffMs?: number;
}

export class NodeMonitor {
  readonly client: AgentClient;
  readonly hooks: MonitorHooks;
  readonly resyncMs: number;
  private readonly backoffMs: number;
  private readonly maxBackoffMs: number;
  models: ModelInfo[] = [];
  lastUpdateMs = 0;
  connected = false;
  private stopped = false;
  private controller: AbortController | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(client: AgentClient, hooks: MonitorHooks, opts: MonitorOptions = {}) {
    this.client = client;
    this.hooks = hooks;
    this.resyncMs = opts.resyncMs ?? 1000;
    this.backoffMs = opts.backoffMs ?? 500;
    this.maxBackoffMs = opts.maxBackoffMs ?? 5000;
  }

  async start(): Promise<void> {
    this.stopped = false;
    await this.resync(true);
    void this.streamLoop();
    this.timer = setInterval(() => void this.resync(false), this.resyncMs);
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  isStale(nowMs: number): boolean {
    return nowMs - this.lastUpdateMs > 2 * this.resyncMs;
  }

  async raise(uid: string, event: string) {
    return this.client.raiseEvent(uid, event);
  }

  /** Pull fresh models (once) and per-model state; marks the view non-stale. */
  private async resync(withModels: boolean): Promise<void> {
    try {
      if (withModels || this.models.length === 0) {
        this.models = await this.client.models(true);
        this.hooks.onModels?.(this.models);
      }
      for (const model of this.models) {
        const view = await this.client.state(model.uid);
        this.lastUpdateMs = Date.now();
        this.hooks.onState?.(view);
        this.hooks.onComm?.(view.comm);
      }
      this.setConnected(true);
    } catch {
      this.setConnected(false);
    }
  }

  private async streamLoop(): Promise<void> {
    let backoff = this.backoffMs;
    while (!this.stopped) {
      this.controller = new AbortController();
      try {
        await this.client.stream((entry) => {
          backoff = this.backoffMs;
          this.onEntry(entry);
        }, this.controller.signal);
      } catch {
        /* drop through to reconnect */
      }
      if (this.stopped) return;
      this.setConnected(false);
      await sleep(backoff);
      backoff = Math.min(backoff * 2, this.maxBackoffMs);
      await this.resync(true); // state may have moved while disconnected
    }
  }

  private onEntry(entry: JournalEntry): void {
    this.lastUpdateMs = Date.now();
    this.setConnected(true);
    this.hooks.onLog?.(entry);
    if (entry.type === "fallback" && entry.uid && entry.from && entry.to) {
      this.hooks.onFallback?.({
        uid: entry.uid,
        from: entry.from,
        to: entry.to,
        cause: entry.cause ?? "unknown",
        t_ms: entry.t_ms,
      });
    }
    if (entry.type === "comm_change" && entry.state) {
      this.hooks.onComm?.({
        state: entry.state,
        consecutive_failures: entry.consecutive_failures ?? 0,
      });
    }
    // state_change and fallback both move the chart; refetch the authoritative
    // view rather than deriving it locally
    if ((entry.type === "state_change" || entry.type === "fallback") && entry.uid) {
      void this.client
        .state(entry.uid)
        .then((view) => {
          this.lastUpdateMs = Date.now();
          this.hooks.onState?.(view);
          this.hooks.onComm?.(view.comm);
        })
        .catch(() => this.setConnected(false));
    }
  }

  private setConnected(up: boolean): void {
    if (up !== this.connected) {
      this.connected = up;
      this.hooks.onConnection?.(up);
    }
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
