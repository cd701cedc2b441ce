"""Load benchmark: N synthetic clients heartbeating through a real hub.

Each client hosts a trivial two-state model and raises one beat per poll
interval; beats route around a ring (client i's beat becomes a peer-beat on
client i+1), so work scales linearly with the client count. Runs use the
wall clock and loopback TCP, mirroring the measurement methodology the
middleware is evaluated with: fixed-duration runs, repeated, with the
relative standard deviation across repetitions reported.
"""

from __future__ import annotations

import logging
import statistics
import threading
import time

import psutil

from .agent import Agent, AgentConfig
from .clock import SystemClock
from .engine import ModelDef, SafetyClass, StateDef, TransitionDef
from .hub import HubConfig, HubServer
from .mapping import MappingTable
from .report import latency_summary

logger = logging.getLogger(__name__)

BEAT = "ev_beat"
PEER_BEAT = "ev_peer_beat"


def bench_uid(i: int) -> bytes:
    return bytes([0xBE] * 8) + i.to_bytes(8, "big")


def beat_model(i: int) -> ModelDef:
    states = (StateDef("Idle", SafetyClass.OPEN_LOOP_SAFE),
              StateDef("Active", SafetyClass.OPEN_LOOP_SAFE))
    transitions = (
        TransitionDef("Idle", "Active", BEAT),
        TransitionDef("Active", "Idle", BEAT),
        TransitionDef("Idle", "Idle", PEER_BEAT),
        TransitionDef("Active", "Active", PEER_BEAT),
    )
    return ModelDef(bench_uid(i), f"bench client {i}", states, transitions, "Idle")


def ring_mapping(clients: int) -> MappingTable:
    normalize_rules = {}
    translate_rules = {}
    declared = {}
    for i in range(clients):
        topic = f"bench.beat.{i}"
        target = bench_uid((i + 1) % clients)
        normalize_rules[(bench_uid(i), BEAT)] = topic
        translate_rules[(topic, target)] = ((PEER_BEAT, ""),)
        declared[topic] = frozenset({target})
    return MappingTable(normalize_rules, translate_rules, declared)


def run_bench(clients: int, poll_interval_ms: int, duration_ms: int,
              repetitions: int, key: bytes = bytes(16),
              batch_limit: int = 32, progress=None) -> dict:
    """Run the full benchmark; returns a report with per-repetition results."""
    if clients > 64:
        raise ValueError("desk-scale cap: at most 64 clients")
    reps = []
    for rep in range(repetitions):
        if progress is not None:
            progress(f"repetition {rep + 1}/{repetitions}")
        reps.append(_run_once(clients, poll_interval_ms, duration_ms, key, batch_limit))

    throughputs = [r["throughput_eps"] for r in reps]
    aggregate = {
        "throughput_mean_eps": round(statistics.fmean(throughputs), 3) if reps else 0.0,
        "throughput_rel_std_pct": _rel_std_pct(throughputs),
        "max_queue_depth": max((r["max_queue_depth"] for r in reps), default=0),
        "all_conserved": all(r["conservation"]["balanced"] for r in reps),
        "all_clean_shutdown": all(r["clean_shutdown"] for r in reps),
        "fallbacks_total": sum(r["fallbacks"] for r in reps),
    }
    return {
        "meta": {
            "clients": clients,
            "poll_interval_ms": poll_interval_ms,
            "duration_ms": duration_ms,
            "repetitions": repetitions,
            "batch_limit": batch_limit,
            "clock": "real",
        },
        "reps": reps,
        "aggregate": aggregate,
    }


def _rel_std_pct(values: list[float]) -> float | None:
    if len(values) < 2 or not any(values):
        return None
    mean = statistics.fmean(values)
    if mean == 0:
        return None
    return round(statistics.stdev(values) / mean * 100.0, 3)


def _run_once(clients: int, poll_interval_ms: int, duration_ms: int,
              key: bytes, batch_limit: int) -> dict:
    import array
    import queue as queue_mod

    clock = SystemClock()
    consumer_uids = [bench_uid(i) for i in range(clients)] or [bench_uid(0)]
    hub_cfg = HubConfig(consumer_uids=consumer_uids, key=key,
                        batch_limit=batch_limit,
                        ping_timeout_ms=max(3000, 3 * poll_interval_ms))
    server = HubServer(hub_cfg, clock, mapping=ring_mapping(clients)).start()

    agents: list[Agent] = []
    subscriptions = []
    raise_times: dict[tuple[str, int], int] = {}
    process = psutil.Process()
    rss_samples: list[list[int]] = []
    depth_samples: list[list[int]] = []
    latencies = array.array("d")  # compact: no per-sample object churn
    applied_box = [0]
    stop_flag = threading.Event()

    try:
        from .agent import AgentCore
        for i in range(clients):
            cfg = AgentConfig(
                key=key, model_paths=[], name=f"bench{i}",
                hub_push_address=("127.0.0.1", server.push_port),
                hub_poll_address=("127.0.0.1", server.poll_port),
                poll_interval_ms=poll_interval_ms,
                ping_period_ms=max(1000, poll_interval_ms),
                comm_fail_threshold=3,
                # small ring so bounded-cache warm-up finishes well before the
                # minute-1 RSS baseline; leak detection then sees steady state
                journal_limit=256,
            )
            core = AgentCore([beat_model(i)], cfg, clock)
            agent = Agent(cfg, clock=clock, core=core)
            subscriptions.append(agent.core.subscribe())
            agents.append(agent)

        t0 = clock.now_ms()
        for agent in agents:
            agent.start()

        def drain_subscriptions():
            # settle latency samples incrementally so the harness itself holds
            # only O(in-flight) state, not the whole run's history
            for sub in subscriptions:
                while True:
                    try:
                        entry = sub.get_nowait()
                    except queue_mod.Empty:
                        break
                    if (entry.get("type") == "state_change"
                            and entry.get("origin") == "remote"):
                        applied_box[0] += 1
                        key_ = (entry["origin_uid"], entry["origin_seq"])
                        raised_at = raise_times.pop(key_, None)
                        if raised_at is not None:
                            latencies.append(float(entry["t_ms"] - raised_at))

        def sampler():
            last_rss = 0.0
            while not stop_flag.wait(1.0):
                now = clock.now_ms() - t0
                drain_subscriptions()
                depth_samples.append([now, server.core.queue.depth()])
                if now - last_rss >= 5000:
                    last_rss = now
                    rss_samples.append([now, process.memory_info().rss])

        sampler_thread = threading.Thread(target=sampler, daemon=True)
        sampler_thread.start()
        rss_samples.append([0, process.memory_info().rss])

        def beat_driver():
            # staggered phases so clients do not beat in lockstep
            next_at = [t0 + poll_interval_ms + (i * poll_interval_ms) // max(1, clients)
                       for i in range(clients)]
            while not stop_flag.is_set():
                now = clock.now_ms()
                soonest = None
                for i, agent in enumerate(agents):
                    if now >= next_at[i]:
                        uid = bench_uid(i)
                        agent.core.on_local_event(uid, BEAT, now)
                        raise_times[(uid.hex(), agent.core.last_sequence(uid))] = now
                        agent._push_wake.set()
                        next_at[i] += poll_interval_ms
                    soonest = min(soonest or next_at[i], next_at[i])
                wait_ms = max(1, (soonest or now + 10) - clock.now_ms())
                stop_flag.wait(min(wait_ms, 20) / 1000.0)

        driver = threading.Thread(target=beat_driver, daemon=True)
        driver.start()

        time.sleep(duration_ms / 1000.0)
        stop_flag.set()
        driver.join(timeout=5)
        # drain grace so in-flight beats settle before accounting
        time.sleep((2 * poll_interval_ms + 300) / 1000.0)
        sampler_thread.join(timeout=3)
        drain_subscriptions()
        rss_samples.append([clock.now_ms() - t0, process.memory_info().rss])
    finally:
        stop_flag.set()

    applied_total = applied_box[0]
    raised = len(latencies) + len(raise_times)  # matched + never-delivered
    hub_stats = server.core.stats.snapshot()
    per_consumer = server.core.per_consumer
    agent_counters = [a.core.counters_snapshot() for a in agents]
    final_depth = server.core.queue.depth()

    sent = sum(c["events_sent"] for c in agent_counters)
    buffered = sum(a.core.outbound_depth() for a in agents)
    buffer_drops = sum(c["buffer_drops"] for c in agent_counters)
    hub_accounted = (hub_stats["events_normalized"] + hub_stats["dedup_drops"]
                     + hub_stats["unknown_events"] + hub_stats["queue_full_drops"])
    records_out = sum(acct["records_out"] for acct in per_consumer.values())
    records_in = sum(c["applied"] + c["no_match_remote"] + c["rejected_unsafe"]
                     + c["duplicate_records"] for c in agent_counters)
    conservation = {
        "raised": raised,
        "sent": sent,
        "buffered_unsent": buffered,
        "buffer_drops": buffer_drops,
        "hub_accounted": hub_accounted,
        "records_out": records_out,
        "records_in": records_in,
        "final_queue_depth": final_depth,
        "balanced": (raised == sent + buffered + buffer_drops
                     and sent == hub_accounted
                     and records_out == records_in),
    }

    fallbacks = sum(c["fallbacks_dwell"] + c["fallbacks_comm_down"]
                    for c in agent_counters)

    clean = True
    for agent in agents:
        agent.stop()
        clean = clean and not any(t.is_alive() for t in agent._threads)
    server.stop()

    duration_s = duration_ms / 1000.0
    events_processed = hub_stats["events_normalized"]
    rss_drift = _rss_drift_pct(rss_samples)
    return {
        "events_processed": events_processed,
        "throughput_eps": round(events_processed / duration_s, 3) if duration_s else 0.0,
        "latency_ms": latency_summary(latencies),
        "applied_total": applied_total,
        "max_queue_depth": max((d for _t, d in depth_samples), default=0),
        "final_queue_depth": final_depth,
        "queue_depth_samples": depth_samples,
        "rss_samples": rss_samples,
        "rss_drift_pct": rss_drift,
        "conservation": conservation,
        "fallbacks": fallbacks,
        "clean_shutdown": clean,
        "hub_stats": hub_stats,
    }


def _rss_drift_pct(samples: list[list[int]]) -> float | None:
    """Drift between the minute-1 sample and the last sample, when both exist."""
    if not samples:
        return None
    at_minute = next((rss for t, rss in samples if t >= 60_000), None)
    if at_minute is None:
        at_minute = samples[0][1]
    final = samples[-1][1]
    if at_minute == 0:
        return None
    return round((final - at_minute) / at_minute * 100.0, 3)
