// Shapes returned by the node agent's local API (/v1/*).

export interface StateInfo {
  name: string;
  safety_class: string;
  max_dwell_ms?: number | null;
  fallback?: string | null;
}

export interface TransitionInfo {
  from: string;
  to: string;
  on: string;
}

export interface ModelInfo {
  uid: string;
  name: string;
  initial?: string;
  states?: StateInfo[];
  transitions?: TransitionInfo[];
}

export interface CommInfo {
  state: string;
  consecutive_failures: number;
}

export interface StateView {
  uid: string;
  active: string;
  safety_class: string;
  dwell_remaining_ms: number | null;
  pending_fallback: string | null;
  comm: CommInfo;
}

export interface EventOutcome {
  outcome: "transitioned" | "no_match" | "rejected_unsafe";
  from_state?: string;
  to_state?: string;
  reason?: string;
}

export interface JournalEntry {
  id: number;
  type: string;
  t_ms: number;
  uid?: string;
  from?: string;
  to?: string;
  event?: string;
  origin?: string;
  cause?: string;
  state?: string;
  consecutive_failures?: number;
}

export interface FallbackAlert {
  uid: string;
  from: string;
  to: string;
  cause: string;
  t_ms: number;
}
