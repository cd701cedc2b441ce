"""Real-clock scenario execution over loopback TCP.

A HubServer and one threaded Agent per node run on ephemeral 127.0.0.1
ports; a driver thread replays the script and fault schedule against the
shared wall clock. Faults toggle the agents' transport-level fail flags,
which drop the sockets exactly like a dead link. All report times are
shifted to run-relative milliseconds.
"""

from __future__ import annotations

import logging
import threading
import time

from .agent import Agent, AgentConfig
from .clock import SystemClock
from .engine import Transitioned
from .hub import HubConfig, HubServer
from .mapping import targets as mapping_targets
from .report import EventLedger, conservation_audit, latency_summary
from .scenario import Scenario, ScenarioError, validate_scenario

logger = logging.getLogger(__name__)


def run_real(scenario: Scenario, seed: int = 0) -> dict:
    loaded = validate_scenario(scenario)
    if not loaded.report.ok:
        raise ScenarioError("scenario failed validation:\n" + loaded.report.summary())
    mapping = loaded.mapping
    assert mapping is not None

    key = bytes.fromhex(scenario.hub.get("key", "00" * 16))
    clock = SystemClock()
    hub_cfg = HubConfig(
        consumer_uids=list(loaded.models),
        key=key,
        mapping_path=str(scenario.mapping_path),
        batch_limit=scenario.hub.get("batch_limit", 32),
        queue_capacity=scenario.hub.get("queue_capacity", 65536),
        ping_timeout_ms=scenario.hub.get("ping_timeout_ms", 3000),
    )
    server = HubServer(hub_cfg, clock).start()
    ledger = EventLedger()

    def disposition_hook(msg, disposition):
        ledger.mark_hub(msg.model_uid, msg.sequence, disposition.value)
        topic = mapping.normalize_rules.get((msg.model_uid, msg.event_name))
        if topic is not None and disposition.value == "enqueued":
            ledger.expect_deliveries(msg.model_uid, msg.sequence,
                                     mapping_targets(mapping, topic))

    server.core.disposition_hook = disposition_hook

    agents: dict[str, Agent] = {}
    depth_series: list[list[int]] = []
    incomplete = False
    error_text = None
    try:
        for node in scenario.nodes:
            cfg = AgentConfig(
                key=key,
                model_paths=[str(p) for p in node.model_paths],
                name=node.name,
                hub_push_address=("127.0.0.1", server.push_port),
                hub_poll_address=("127.0.0.1", server.poll_port),
                poll_interval_ms=node.poll_interval_ms,
                ping_period_ms=node.ping_period_ms,
                comm_fail_threshold=node.comm_fail_threshold,
                outbound_buffer=node.outbound_buffer,
                reconnect_initial_ms=node.reconnect_initial_ms,
                reconnect_max_ms=node.reconnect_max_ms,
            )
            agent = Agent(cfg, clock=clock)
            agent.core.buffer_drop_hook = lambda msg: ledger.mark_buffer_drop(
                msg.model_uid, msg.sequence)
            agents[node.name] = agent

        t0 = clock.now_ms()
        for agent in agents.values():
            agent.start()

        stop_sampler = threading.Event()

        def sampler():
            while not stop_sampler.wait(0.25):
                depth_series.append([clock.now_ms() - t0, server.core.queue.depth()])

        sampler_thread = threading.Thread(target=sampler, daemon=True)
        sampler_thread.start()

        timeline: list[tuple[int, str, object]] = []
        timeline += [(ev.t_ms, "script", ev) for ev in scenario.script]
        timeline += [(f.t_ms, "fault", f) for f in scenario.faults]
        timeline.sort(key=lambda item: item[0])

        for t_ms, kind, item in timeline:
            wait_s = (t0 + t_ms - clock.now_ms()) / 1000.0
            if wait_s > 0:
                time.sleep(wait_s)
            if kind == "script":
                agent = agents[item.node]
                now = clock.now_ms()
                outcome = agent.core.on_local_event(item.model_uid, item.event, now)
                if isinstance(outcome, Transitioned):
                    seq = agent.core.last_sequence(item.model_uid)
                    ledger.record_scripted(item.node, item.model_uid, item.event,
                                           now, seq, "transitioned")
                else:
                    ledger.record_scripted(item.node, item.model_uid, item.event,
                                           now, None, "no_match_local")
                agent._push_wake.set()
            else:
                transport = agents[item.node].transport
                if item.kind == "drop_push":
                    transport.fail_push = True
                elif item.kind == "drop_poll":
                    transport.fail_poll = True
                elif item.kind == "drop_all":
                    transport.fail_push = True
                    transport.fail_poll = True
                else:  # restore
                    transport.fail_push = False
                    transport.fail_poll = False

        remaining_s = (t0 + scenario.duration_ms - clock.now_ms()) / 1000.0
        if remaining_s > 0:
            time.sleep(remaining_s)
        # drain grace: let queued work reach the agents before accounting
        grace_ms = 2 * max(n.poll_interval_ms for n in scenario.nodes) + 300
        time.sleep(grace_ms / 1000.0)
        stop_sampler.set()
        sampler_thread.join(timeout=2)
    except Exception as exc:
        logger.exception("real-clock run aborted")
        incomplete = True
        error_text = f"{type(exc).__name__}: {exc}"
        t0 = locals().get("t0", clock.now_ms())

    for name, agent in agents.items():
        ledger.mark_unsent(agent.core.outbound_messages())
        journal = agent.core.journal_since(0)
        for uid in agent.core.uids:
            ledger.resolve_from_journal(uid, journal)

    fallbacks = []
    comm_changes = []
    fault_times: dict[str, int] = {}
    for fault in scenario.faults:
        if fault.kind != "restore":
            fault_times.setdefault(fault.node, fault.t_ms)
    for name, agent in agents.items():
        for item in agent.core.journal_since(0):
            if item["type"] == "fallback":
                entry = {"t_ms": item["t_ms"] - t0, "node": name, "uid": item["uid"],
                         "from": item["from"], "to": item["to"], "cause": item["cause"]}
                if item["cause"] == "comm_down" and name in fault_times:
                    entry["since_fault_ms"] = item["t_ms"] - t0 - fault_times[name]
                fallbacks.append(entry)
            elif item["type"] == "comm_change":
                comm_changes.append({"t_ms": item["t_ms"] - t0, "node": name,
                                     "state": item["state"]})

    ledger_counters = ledger.outcome_counters()
    hub_stats = server.core.stats.snapshot()
    agent_counters = {name: agent.core.counters_snapshot()
                      for name, agent in agents.items()}
    per_consumer = {uid.hex(): dict(acct)
                    for uid, acct in sorted(server.core.per_consumer.items())}
    final_depth = server.core.queue.depth()
    final_states = {
        name: {uid.hex(): {"active": inst.active,
                           "safety_class": inst.active_state.safety_class.value}
               for uid, inst in agent.core.instances.items()}
        for name, agent in agents.items()}

    for agent in agents.values():
        agent.stop()
    server.stop()

    per_event = ledger.to_json()
    for entry in per_event:
        entry["t_ms"] -= t0
        for delivery in entry["deliveries"]:
            if "t_applied" in delivery:
                delivery["t_applied"] -= t0

    return {
        "meta": {
            "scenario": scenario.path.name,
            "seed": seed,
            "clock": "real",
            "duration_ms": scenario.duration_ms,
            "poll_interval_ms": {n.name: n.poll_interval_ms for n in scenario.nodes},
            "incomplete": incomplete,
            "error": error_text,
        },
        "counters": {
            "pipeline": ledger_counters,
            "hub": hub_stats,
            "hub_per_consumer": per_consumer,
            "agents": agent_counters,
        },
        "latency_ms": latency_summary(ledger.latency_samples()),
        "fallbacks": fallbacks,
        "comm_changes": comm_changes,
        "hub_events": [],
        "queue_depth": depth_series,
        "final_queue_depth": final_depth,
        "final_states": final_states,
        "per_event": per_event,
        "conservation": conservation_audit(ledger_counters, hub_stats, agent_counters),
    }
