// One dashboard column per agent. Strictly presentational: state strings are
// rendered verbatim from the API, and the only mutation path is the event
// buttons posting to /v1/events. The dwell countdown is interpolated locally
// from the last synced dwell_remaining_ms and resynced on every update.

import { AgentClient } from "./api.js";
import { NodeMonitor, type MonitorOptions } from "./nodeview.js";
import type {
  CommInfo,
  FallbackAlert,
  JournalEntry,
  ModelInfo,
  StateView,
} from "./types.js";

const LOG_TAIL = 10;

interface DwellSync {
  remainingMs: number | null;
  syncedAt: number;
}

export class AgentPanel {
  readonly element: HTMLElement;
  readonly monitor: NodeMonitor;
  private readonly doc: Document;
  private readonly cards = new Map<string, HTMLElement>();
  private readonly modelsByUid = new Map<string, ModelInfo>();
  private readonly dwell = new Map<string, DwellSync>();
  private readonly logEntries: JournalEntry[] = [];
  private ticker: ReturnType<typeof setInterval> | null = null;

  constructor(doc: Document, baseUrl: string, opts: MonitorOptions = {}) {
    this.doc = doc;
    this.element = doc.createElement("section");
    this.element.className = "agent-panel";
    this.element.innerHTML = [
      `<header>`,
      `<h2 data-role="address"></h2>`,
      `<span data-role="comm" class="badge"></span>`,
      `<span data-role="staleness" class="badge stale" hidden>stale</span>`,
      `<span data-role="connection" class="badge"></span>`,
      `</header>`,
      `<div data-role="alerts"></div>`,
      `<div data-role="models"></div>`,
      `<div data-role="toast" class="toast"></div>`,
      `<pre data-role="log"></pre>`,
    ].join("");
    this.select("address").textContent = baseUrl;
    this.monitor = new NodeMonitor(new AgentClient(baseUrl), {
      onModels: (models) => this.renderModels(models),
      onState: (view) => this.renderState(view),
      onComm: (comm) => this.renderComm(comm),
      onFallback: (alert) => this.renderAlert(alert),
      onLog: (entry) => this.renderLog(entry),
      onConnection: (up) => this.renderConnection(up),
    }, opts);
  }

  async start(): Promise<void> {
    await this.monitor.start();
    this.ticker = setInterval(() => this.tick(), 100);
  }

  stop(): void {
    this.monitor.stop();
    if (this.ticker !== null) clearInterval(this.ticker);
    this.ticker = null;
  }

  select(role: string): HTMLElement {
    const found = this.element.querySelector(`[data-role="${role}"]`);
    if (!found) throw new Error(`missing panel element ${role}`);
    return found as HTMLElement;
  }

  card(uid: string): HTMLElement | undefined {
    return this.cards.get(uid);
  }

  renderModels(models: ModelInfo[]): void {
    const host = this.select("models");
    for (const model of models) {
      this.modelsByUid.set(model.uid, model);
      if (this.cards.has(model.uid)) continue;
      const card = this.doc.createElement("article");
      card.className = "model-card";
      card.dataset.uid = model.uid;
      card.innerHTML = [
        `<h3 data-role="name"></h3>`,
        `<div>state: <strong data-role="active"></strong>`,
        ` <span data-role="safety" class="badge"></span></div>`,
        `<div data-role="dwell-row" hidden>dwell: <span data-role="dwell"></span>`,
        ` fallback: <span data-role="pending"></span></div>`,
        `<div data-role="buttons"></div>`,
      ].join("");
      (card.querySelector(`[data-role="name"]`) as HTMLElement).textContent = model.name;
      const buttons = card.querySelector(`[data-role="buttons"]`) as HTMLElement;
      for (const trigger of this.triggerNames(model)) {
        const button = this.doc.createElement("button");
        button.dataset.event = trigger;
        button.textContent = trigger;
        button.disabled = true;
        button.addEventListener("click", () => void this.onRaise(model.uid, trigger));
        buttons.appendChild(button);
      }
      host.appendChild(card);
      this.cards.set(model.uid, card);
    }
  }

  renderState(view: StateView): void {
    const card = this.cards.get(view.uid);
    if (!card) return;
    (card.querySelector(`[data-role="active"]`) as HTMLElement).textContent = view.active;
    (card.querySelector(`[data-role="safety"]`) as HTMLElement).textContent =
      view.safety_class;
    const dwellRow = card.querySelector(`[data-role="dwell-row"]`) as HTMLElement;
    dwellRow.hidden = view.dwell_remaining_ms === null;
    (card.querySelector(`[data-role="pending"]`) as HTMLElement).textContent =
      view.pending_fallback ?? "";
    this.dwell.set(view.uid, {
      remainingMs: view.dwell_remaining_ms,
      syncedAt: Date.now(),
    });
    this.renderDwell(view.uid);
    this.renderButtons(view.uid, view.active);
    this.renderComm(view.comm);
  }

  renderComm(comm: CommInfo): void {
    const badge = this.select("comm");
    badge.textContent = `comm: ${comm.state} (${comm.consecutive_failures})`;
    badge.dataset.state = comm.state;
  }

  renderAlert(alert: FallbackAlert): void {
    const box = this.doc.createElement("div");
    box.className = "alert";
    box.dataset.cause = alert.cause;
    const text = this.doc.createElement("span");
    text.textContent = `${alert.from} → ${alert.to} (${alert.cause})`;
    const ack = this.doc.createElement("button");
    ack.textContent = "Acknowledge";
    ack.dataset.role = "ack";
    ack.addEventListener("click", () => box.remove());
    box.append(text, ack);
    this.select("alerts").appendChild(box);
  }

  renderLog(entry: JournalEntry): void {
    this.logEntries.push(entry);
    if (this.logEntries.length > LOG_TAIL) this.logEntries.shift();
    this.select("log").textContent = this.logEntries
      .map((e) => formatLogLine(e))
      .join("\n");
  }

  renderConnection(up: boolean): void {
    const badge = this.select("connection");
    badge.textContent = up ? "" : "agent unreachable - retrying";
    badge.hidden = up;
  }

  private renderButtons(uid: string, active: string): void {
    const card = this.cards.get(uid);
    const model = this.modelsByUid.get(uid);
    if (!card || !model) return;
    const legal = new Set(
      (model.transitions ?? []).filter((t) => t.from === active).map((t) => t.on));
    for (const button of card.querySelectorAll("button[data-event]")) {
      (button as HTMLButtonElement).disabled =
        !legal.has((button as HTMLElement).dataset.event ?? "");
    }
  }

  private renderDwell(uid: string): void {
    const card = this.cards.get(uid);
    const sync = this.dwell.get(uid);
    if (!card || !sync) return;
    const slot = card.querySelector(`[data-role="dwell"]`) as HTMLElement;
    if (sync.remainingMs === null) {
      slot.textContent = "";
      return;
    }
    const left = Math.max(0, sync.remainingMs - (Date.now() - sync.syncedAt));
    slot.textContent = `${(left / 1000).toFixed(1)}s`;
  }

  private tick(): void {
    for (const uid of this.dwell.keys()) this.renderDwell(uid);
    this.select("staleness").hidden = !this.monitor.isStale(Date.now());
  }

  private triggerNames(model: ModelInfo): string[] {
    const seen = new Set<string>();
    const ordered: string[] = [];
    for (const t of model.transitions ?? []) {
      if (!seen.has(t.on)) {
        seen.add(t.on);
        ordered.push(t.on);
      }
    }
    return ordered;
  }

  private async onRaise(uid: string, event: string): Promise<void> {
    const toast = this.select("toast");
    try {
      const outcome = await this.monitor.raise(uid, event);
      if (outcome.outcome === "transitioned") {
        toast.textContent = `${event}: ${outcome.from_state} → ${outcome.to_state}`;
      } else if (outcome.outcome === "rejected_unsafe") {
        toast.textContent = `${event}: rejected as unsafe (${outcome.reason ?? ""})`;
      } else {
        toast.textContent = `${event}: no transition from the current state`;
      }
      toast.dataset.kind = outcome.outcome;
    } catch (err) {
      toast.textContent = `${event}: request failed (${String(err)})`;
      toast.dataset.kind = "error";
    }
  }
}

function formatLogLine(entry: JournalEntry): string {
  const uid = entry.uid ? entry.uid.slice(-4) : "----";
  switch (entry.type) {
    case "state_change":
      return `[${entry.t_ms}] ${uid} ${entry.from} → ${entry.to} (${entry.origin ?? "?"}: ${entry.event ?? ""})`;
    case "fallback":
      return `[${entry.t_ms}] ${uid} FALLBACK ${entry.from} → ${entry.to} (${entry.cause})`;
    case "comm_change":
      return `[${entry.t_ms}] comm ${entry.state} (${entry.consecutive_failures ?? 0})`;
    default:
      return `[${entry.t_ms}] ${entry.type}`;
  }
}
