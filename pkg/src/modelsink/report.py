"""Metrics assembly shared by the simulated and real-clock runners.

The ledger follows every scripted event through the pipeline by its
(origin uid, sequence) identity and settles each expected delivery into one
of: applied, rejected_unsafe, no_match, duplicate, retained (still queued at
shutdown), or lost-with-reason. The conservation audit cross-checks the
stage counters so silent loss cannot hide.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile; deterministic for identical inputs."""
    if not values:
        return 0.0
    ordered = sorted(values)
    idx = max(0, math.ceil(q / 100.0 * len(ordered)) - 1)
    return float(ordered[idx])


def latency_summary(samples: list[float]) -> dict:
    if not samples:
        return {"count": 0, "p50": 0.0, "p95": 0.0, "max": 0.0, "mean": 0.0}
    return {
        "count": len(samples),
        "p50": percentile(samples, 50),
        "p95": percentile(samples, 95),
        "max": float(max(samples)),
        "mean": round(sum(samples) / len(samples), 3),
    }


@dataclass
class LedgerEntry:
    node: str
    model_uid: bytes
    event: str
    t_raised: int
    sequence: int | None = None           # None when the event never transitioned
    origin_outcome: str = "no_match_local"
    hub_disposition: str | None = None
    deliveries: dict[bytes, dict] = field(default_factory=dict)  # target uid -> status

    def key(self):
        return (self.model_uid, self.sequence)


class EventLedger:
    """Keyed by (origin uid, sequence). Hub-side marks may arrive from handler
    threads before the driver registers the scripted event, so they late-bind
    through a pending map."""

    def __init__(self):
        self.entries: list[LedgerEntry] = []
        self._by_key: dict[tuple[bytes, int], LedgerEntry] = {}
        self._pending: dict[tuple[bytes, int], dict] = {}

    def record_scripted(self, node, model_uid, event, t_raised, sequence,
                        origin_outcome) -> LedgerEntry:
        entry = LedgerEntry(node, model_uid, event, t_raised,
                            sequence, origin_outcome)
        self.entries.append(entry)
        if sequence is not None:
            self._by_key[(model_uid, sequence)] = entry
            pending = self._pending.pop((model_uid, sequence), None)
            if pending:
                if "hub" in pending:
                    entry.hub_disposition = pending["hub"]
                for target in pending.get("targets", ()):
                    if target != model_uid:
                        entry.deliveries.setdefault(target, {"status": "retained"})
        return entry

    def find(self, origin_uid: bytes, sequence: int) -> LedgerEntry | None:
        return self._by_key.get((origin_uid, sequence))

    def mark_hub(self, origin_uid: bytes, sequence: int, disposition: str) -> None:
        entry = self.find(origin_uid, sequence)
        if entry is not None:
            entry.hub_disposition = disposition
        else:
            self._pending.setdefault((origin_uid, sequence), {})["hub"] = disposition

    def mark_buffer_drop(self, origin_uid: bytes, sequence: int) -> None:
        entry = self.find(origin_uid, sequence)
        if entry is not None:
            entry.origin_outcome = "dropped_buffer_overflow"

    def expect_deliveries(self, origin_uid, sequence, target_uids) -> None:
        entry = self.find(origin_uid, sequence)
        if entry is None:
            slot = self._pending.setdefault((origin_uid, sequence), {})
            slot.setdefault("targets", set()).update(target_uids)
            return
        for target in target_uids:
            if target != origin_uid:
                entry.deliveries.setdefault(target, {"status": "retained"})

    def resolve_from_journal(self, target_uid: bytes, journal: list[dict]) -> None:
        """Settle deliveries for one hosted model from its agent journal."""
        by_type = {"state_change": "applied", "rejected_unsafe": "rejected_unsafe",
                   "remote_no_match": "no_match", "duplicate_record": "duplicate"}
        for item in journal:
            status = by_type.get(item["type"])
            if status is None or "origin_uid" not in item:
                continue
            if item["type"] == "state_change" and item.get("origin") != "remote":
                continue
            if item["uid"] != target_uid.hex():
                continue
            entry = self.find(bytes.fromhex(item["origin_uid"]), item["origin_seq"])
            if entry is None:
                continue
            slot = entry.deliveries.setdefault(target_uid, {})
            slot["status"] = status
            slot["t_applied"] = item["t_ms"]
            slot["latency_ms"] = item["t_ms"] - entry.t_raised

    def mark_unsent(self, outbound_messages) -> None:
        for msg in outbound_messages:
            entry = self.find(msg.model_uid, msg.sequence)
            if entry is not None and entry.hub_disposition is None:
                entry.origin_outcome = "buffered_unsent"

    def latency_samples(self) -> list[float]:
        out = []
        for entry in self.entries:
            for slot in entry.deliveries.values():
                if slot.get("status") == "applied":
                    out.append(float(slot["latency_ms"]))
        return out

    def outcome_counters(self) -> dict:
        counters = {
            "scripted": len(self.entries),
            "no_match_local": 0, "transitioned": 0,
            "buffered_unsent": 0, "dropped_buffer_overflow": 0,
            "hub_enqueued": 0, "hub_dropped_duplicate": 0,
            "hub_dropped_unknown": 0, "hub_dropped_queue_full": 0,
            "delivery_applied": 0, "delivery_rejected_unsafe": 0,
            "delivery_no_match": 0, "delivery_duplicate": 0,
            "delivery_retained": 0,
        }
        for entry in self.entries:
            if entry.sequence is None:
                counters["no_match_local"] += 1
                continue
            counters["transitioned"] += 1
            if entry.origin_outcome == "buffered_unsent":
                counters["buffered_unsent"] += 1
            elif entry.origin_outcome == "dropped_buffer_overflow":
                counters["dropped_buffer_overflow"] += 1
            if entry.hub_disposition is not None:
                key = f"hub_{entry.hub_disposition}"
                if key in counters:
                    counters[key] += 1
            for slot in entry.deliveries.values():
                key = f"delivery_{slot.get('status', 'retained')}"
                counters.setdefault(key, 0)
                counters[key] += 1
        return counters

    def to_json(self) -> list[dict]:
        out = []
        for entry in self.entries:
            deliveries = []
            for target in sorted(entry.deliveries):
                slot = entry.deliveries[target]
                item = {"target": target.hex(), "status": slot.get("status", "retained")}
                if "latency_ms" in slot:
                    item["latency_ms"] = slot["latency_ms"]
                    item["t_applied"] = slot["t_applied"]
                deliveries.append(item)
            out.append({
                "node": entry.node,
                "model": entry.model_uid.hex(),
                "event": entry.event,
                "t_ms": entry.t_raised,
                "sequence": entry.sequence,
                "origin_outcome": entry.origin_outcome,
                "hub_disposition": entry.hub_disposition,
                "deliveries": deliveries,
            })
        return out


def conservation_audit(ledger_counters: dict, hub_stats: dict,
                       agent_counters: dict[str, dict]) -> dict:
    """Cross-check stage counters; 'balanced' means no unaccounted loss anywhere."""
    sent_total = sum(c["events_sent"] for c in agent_counters.values())
    hub_in = (hub_stats["events_normalized"] + hub_stats["dedup_drops"]
              + hub_stats["unknown_events"] + hub_stats["queue_full_drops"])
    relations = {
        "scripted_split": {
            "scripted": ledger_counters["scripted"],
            "no_match_local": ledger_counters["no_match_local"],
            "transitioned": ledger_counters["transitioned"],
            "balanced": (ledger_counters["scripted"]
                         == ledger_counters["no_match_local"]
                         + ledger_counters["transitioned"]),
        },
        "hub_intake": {
            "events_sent": sent_total,
            "hub_accounted": hub_in,
            "balanced": sent_total == hub_in,
        },
        "deliveries_settled": {
            "retained": ledger_counters["delivery_retained"],
            "unsettled": sum(
                1 for k, v in ledger_counters.items()
                if k.startswith("delivery_unknown") and v),
            "balanced": not any(
                k.startswith("delivery_unknown") and v
                for k, v in ledger_counters.items()),
        },
    }
    return {
        "balanced": all(r["balanced"] for r in relations.values()),
        "relations": relations,
    }


def render_report(report: dict) -> bytes:
    return json.dumps(report, sort_keys=True, indent=2).encode() + b"\n"


def write_report(report: dict, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    json_path.write_bytes(render_report(report))
    write_csv_views(report, out)
    return json_path


def write_csv_views(report: dict, out_dir: str | Path) -> None:
    """Flat CSV projections for plotting tools."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "latencies.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ms", "node", "model", "event", "target", "latency_ms"])
        for entry in report.get("per_event", []):
            for delivery in entry["deliveries"]:
                if delivery.get("latency_ms") is not None and delivery["status"] == "applied":
                    writer.writerow([entry["t_ms"], entry["node"], entry["model"],
                                     entry["event"], delivery["target"],
                                     delivery["latency_ms"]])
    with open(out / "queue_depth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ms", "depth"])
        for t, depth in report.get("queue_depth", []):
            writer.writerow([t, depth])
    with open(out / "counters.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["counter", "value"])
        flat = dict(report.get("counters", {}).get("pipeline", {}))
        for name, value in sorted(report.get("counters", {}).get("hub", {}).items()):
            flat[f"hub.{name}"] = value
        for agent, counters in sorted(report.get("counters", {}).get("agents", {}).items()):
            for name, value in sorted(counters.items()):
                flat[f"{agent}.{name}"] = value
        for name, value in sorted(flat.items()):
            writer.writerow([name, value])
