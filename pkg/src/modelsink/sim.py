"""Deterministic co-simulation of hub plus agents under a virtual clock.

Everything runs in one thread: a discrete-event scheduler fires poll, ping,
and supervisor timers, scripted events, and fault toggles in timestamp
order, advancing the shared SimClock between steps. Frames still round-trip
through the real codec, so the wire format is exercised end to end. Equal
seeds produce byte-identical reports.
"""

from __future__ import annotations

import heapq
import logging
from pathlib import Path

from . import wire
from .agent import AgentConfig, AgentCore, TransportError
from .aes import Aes128Ecb
from .clock import SimClock
from .engine import Transitioned
from .hub import HubConfig, HubCore
from .mapping import targets as mapping_targets
from .report import (
    EventLedger,
    conservation_audit,
    latency_summary,
)
from .scenario import Scenario, ScenarioError, load_scenario, validate_scenario

logger = logging.getLogger(__name__)


class SimScheduler:
    def __init__(self, clock: SimClock):
        self.clock = clock
        self._heap: list[tuple[int, int, object]] = []
        self._seq = 0

    def at(self, t_ms: int, fn) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t_ms, self._seq, fn))

    def every(self, first_ms: int, period_ms: int, until_ms: int, fn) -> None:
        def tick():
            fn()
            nxt = self.clock.now_ms() + period_ms
            if nxt <= until_ms:
                self.at(nxt, tick)
        if first_ms <= until_ms:
            self.at(first_ms, tick)

    def run(self, until_ms: int) -> None:
        while self._heap and self._heap[0][0] <= until_ms:
            t, _seq, fn = heapq.heappop(self._heap)
            self.clock.set(t)
            fn()
        self.clock.set(until_ms)


class InProcessTransport:
    """Agent-side transport wired straight into a HubCore; push/poll fault flags
    emulate link loss. Frames are encoded and decoded for codec fidelity."""

    def __init__(self, hub: HubCore, key: bytes):
        self.hub = hub
        self.cipher = Aes128Ecb(key)
        self.push_down = False
        self.poll_down = False

    def send_events(self, messages) -> int:
        sent = 0
        for msg in messages:
            if self.push_down:
                break
            delivered = wire.decode_with_cipher(
                wire.encode_with_cipher(msg, self.cipher), self.cipher)
            self.hub.stats.bump("frames_in")
            self.hub.handle_event_frame(delivered)
            sent += 1
        return sent

    def send_pings(self, uids) -> None:
        if self.push_down:
            raise TransportError("push link down (injected)")
        for uid in uids:
            frame = wire.encode_with_cipher(
                wire.ping_message(uid, self.hub.clock.now_ms()), self.cipher)
            self.hub.stats.bump("frames_in")
            self.hub.note_alive(wire.decode_with_cipher(frame, self.cipher).model_uid)

    def poll(self, uid: bytes) -> wire.SyncMessage:
        if self.poll_down:
            raise TransportError("poll link down (injected)")
        resp = self.hub.serve_poll(uid)
        self.hub.stats.bump("frames_out")
        return wire.decode_with_cipher(
            wire.encode_with_cipher(resp, self.cipher), self.cipher)


def run_simulated(scenario: Scenario, seed: int = 0) -> dict:
    """Run a simulated-clock scenario to completion and build its report."""
    loaded = validate_scenario(scenario)
    if not loaded.report.ok:
        raise ScenarioError("scenario failed validation:\n" + loaded.report.summary())
    models, mapping = loaded.models, loaded.mapping
    assert mapping is not None

    key = bytes.fromhex(scenario.hub.get("key", "00" * 16))
    clock = SimClock(0)
    sched = SimScheduler(clock)
    duration = scenario.duration_ms

    # validate_scenario loads models in node declaration order
    all_uids = list(models)

    hub_cfg = HubConfig(
        consumer_uids=all_uids,
        key=key,
        batch_limit=scenario.hub.get("batch_limit", 32),
        queue_capacity=scenario.hub.get("queue_capacity", 65536),
        ping_timeout_ms=scenario.hub.get("ping_timeout_ms", 3000),
    )
    hub = HubCore(hub_cfg, mapping, clock)

    ledger = EventLedger()
    agents: dict[str, AgentCore] = {}
    transports: dict[str, InProcessTransport] = {}
    hub_events: list[dict] = []
    depth_series: list[list[int]] = []

    def disposition_hook(msg: wire.SyncMessage, disposition) -> None:
        ledger.mark_hub(msg.model_uid, msg.sequence, disposition.value)
        topic = mapping.normalize_rules.get((msg.model_uid, msg.event_name))
        if topic is not None and disposition.value == "enqueued":
            ledger.expect_deliveries(msg.model_uid, msg.sequence,
                                     mapping_targets(mapping, topic))

    hub.disposition_hook = disposition_hook

    for node in scenario.nodes:
        node_models = [models[uid] for uid in loaded.node_models[node.name]]
        cfg = AgentConfig(
            key=key, model_paths=[], name=node.name,
            poll_interval_ms=node.poll_interval_ms,
            ping_period_ms=node.ping_period_ms,
            comm_fail_threshold=node.comm_fail_threshold,
            outbound_buffer=node.outbound_buffer,
        )
        core = AgentCore(node_models, cfg, clock)
        core.buffer_drop_hook = lambda msg: ledger.mark_buffer_drop(
            msg.model_uid, msg.sequence)
        agents[node.name] = core
        transports[node.name] = InProcessTransport(hub, key)

    # recurring timers
    for node in scenario.nodes:
        core = agents[node.name]
        transport = transports[node.name]

        def poll_tick(core=core, transport=transport):
            core.flush_outbound(transport)
            core.poll_cycle(transport)

        def ping_tick(core=core, transport=transport):
            core.flush_outbound(transport)
            core.ping_cycle(transport)

        def supervise_tick(core=core):
            core.supervise()

        sched.every(node.poll_interval_ms, node.poll_interval_ms, duration, poll_tick)
        sched.every(node.ping_period_ms, node.ping_period_ms, duration, ping_tick)
        period = core.config.supervisor_period_ms
        sched.every(period, period, duration, supervise_tick)

    def keepalive_tick():
        for down in hub.keepalive_scan():
            hub_events.append({"t_ms": clock.now_ms(), "type": "connection_down",
                               "uid": down.origin_uid.hex()})

    keepalive_period = max(500, hub_cfg.ping_timeout_ms // 3)
    sched.every(keepalive_period, keepalive_period, duration, keepalive_tick)
    sched.every(0, 500, duration, lambda: depth_series.append(
        [clock.now_ms(), hub.queue.depth()]))

    # faults, then script, in timestamp order
    for fault in scenario.faults:
        def apply_fault(fault=fault):
            transport = transports[fault.node]
            core = agents[fault.node]
            if fault.kind == "drop_push":
                transport.push_down = True
            elif fault.kind == "drop_poll":
                transport.poll_down = True
            elif fault.kind == "drop_all":
                transport.push_down = True
                transport.poll_down = True
            else:  # restore
                transport.push_down = False
                transport.poll_down = False
                core.flush_outbound(transport)
        sched.at(fault.t_ms, apply_fault)

    for ev in scenario.script:
        def run_script_event(ev=ev):
            core = agents[ev.node]
            transport = transports[ev.node]
            now = clock.now_ms()
            outcome = core.on_local_event(ev.model_uid, ev.event, now)
            if isinstance(outcome, Transitioned):
                seq = core.last_sequence(ev.model_uid)
                ledger.record_scripted(ev.node, ev.model_uid, ev.event, now,
                                       seq, "transitioned")
            else:
                ledger.record_scripted(ev.node, ev.model_uid, ev.event, now,
                                       None, "no_match_local")
            core.flush_outbound(transport)
        sched.at(ev.t_ms, run_script_event)

    incomplete = False
    error_text = None
    try:
        sched.run(duration)
    except Exception as exc:  # partial report, flagged
        logger.exception("simulated run aborted")
        incomplete = True
        error_text = f"{type(exc).__name__}: {exc}"

    # settle the ledger
    for node in scenario.nodes:
        core = agents[node.name]
        ledger.mark_unsent(core.outbound_messages())
        journal = core.journal_since(0)
        for uid in core.uids:
            ledger.resolve_from_journal(uid, journal)

    fallbacks = []
    comm_changes = []
    fault_times: dict[str, int] = {}
    for fault in scenario.faults:
        if fault.kind != "restore":
            fault_times.setdefault(fault.node, fault.t_ms)
    for node in scenario.nodes:
        for item in agents[node.name].journal_since(0):
            if item["type"] == "fallback":
                entry = {"t_ms": item["t_ms"], "node": node.name, "uid": item["uid"],
                         "from": item["from"], "to": item["to"], "cause": item["cause"]}
                if item["cause"] == "comm_down" and node.name in fault_times:
                    entry["since_fault_ms"] = item["t_ms"] - fault_times[node.name]
                fallbacks.append(entry)
            elif item["type"] == "comm_change":
                comm_changes.append({"t_ms": item["t_ms"], "node": node.name,
                                     "state": item["state"]})

    ledger_counters = ledger.outcome_counters()
    hub_stats = hub.stats.snapshot()
    agent_counters = {name: core.counters_snapshot() for name, core in agents.items()}
    final_states = {
        name: {uid.hex(): {"active": inst.active,
                           "safety_class": inst.active_state.safety_class.value}
               for uid, inst in core.instances.items()}
        for name, core in agents.items()}

    report = {
        "meta": {
            "scenario": scenario.path.name,
            "seed": seed,
            "clock": "simulated",
            "duration_ms": duration,
            "poll_interval_ms": {n.name: n.poll_interval_ms for n in scenario.nodes},
            "incomplete": incomplete,
            "error": error_text,
        },
        "counters": {
            "pipeline": ledger_counters,
            "hub": hub_stats,
            "hub_per_consumer": {uid.hex(): dict(acct)
                                 for uid, acct in sorted(hub.per_consumer.items())},
            "agents": agent_counters,
        },
        "latency_ms": latency_summary(ledger.latency_samples()),
        "fallbacks": fallbacks,
        "comm_changes": comm_changes,
        "hub_events": hub_events,
        "queue_depth": depth_series,
        "final_queue_depth": hub.queue.depth(),
        "final_states": final_states,
        "per_event": ledger.to_json(),
        "conservation": conservation_audit(ledger_counters, hub_stats, agent_counters),
    }
    return report


def run_simulated_path(path: str | Path, seed: int = 0) -> dict:
    return run_simulated(load_scenario(path), seed)
