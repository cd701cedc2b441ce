"""Per-machine agent: push client, poll client, and the safety supervisor.

AgentCore owns the engine instances and all bookkeeping; it is driven either
by the real threads in Agent (wall clock, framed TCP) or directly by the
simulation harness (virtual clock, in-process hub). All engine mutations are
serialized through one lock, so callers observe linearized state and a poll
batch applies atomically with respect to local event intake.

Communication failure is declared after comm_fail_threshold consecutive
failed polls or failed pings, whichever trips first. On the transition to
Down the supervisor forces every transient-safe instance to its queued
open-loop safe fallback; dwell expiry is enforced on every supervisor tick
regardless of link state.
"""

from __future__ import annotations

import enum
import logging
import socket
import threading
from collections import deque
from dataclasses import dataclass

from . import wire
from .aes import Aes128Ecb
from .clock import SystemClock
from .engine import (
    LOCAL,
    EngineInstance,
    FallbackFired,
    ModelDef,
    NoMatch,
    RejectedUnsafe,
    Remote,
    SafetyClass,
    Transitioned,
    start as engine_start,
)

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


class UnknownModel(Exception):
    pass


class TransportError(Exception):
    pass


@dataclass
class AgentConfig:
    key: bytes
    model_paths: list[str]
    name: str = "agent"
    hub_push_address: tuple[str, int] | None = None
    hub_poll_address: tuple[str, int] | None = None
    poll_interval_ms: int = 1000
    ping_period_ms: int = 1000
    comm_fail_threshold: int = 3
    reconnect_initial_ms: int = 200
    reconnect_max_ms: int = 5000
    outbound_buffer: int = 1024
    local_api_host: str = "127.0.0.1"
    local_api_port: int = 0
    max_frame: int = wire.DEFAULT_MAX_FRAME
    journal_limit: int = 4096  # ring size for /v1/log and stream backlog

    def validate(self) -> None:
        if len(self.key) != 16:
            raise ConfigError("key must be 16 bytes")
        if self.poll_interval_ms < 10:
            raise ConfigError("poll_interval_ms must be >= 10")
        if self.comm_fail_threshold < 1:
            raise ConfigError("comm_fail_threshold must be >= 1")
        if self.ping_period_ms < 10:
            raise ConfigError("ping_period_ms must be >= 10")
        if self.outbound_buffer < 1:
            raise ConfigError("outbound_buffer must be >= 1")

    @property
    def supervisor_period_ms(self) -> int:
        return min(self.poll_interval_ms, 100)


class CommState(enum.Enum):
    CONNECTED = "connected"
    DEGRADED = "degraded"
    DOWN = "down"


class CommStatus:
    def __init__(self):
        self.poll_failures = 0
        self.ping_failures = 0
        self.last_ok_ms = 0
        self.state = CommState.CONNECTED
        self.down_epoch = 0  # bumped on every transition into DOWN

    @property
    def consecutive_failures(self) -> int:
        return max(self.poll_failures, self.ping_failures)


@dataclass
class AppliedReport:
    applied: int = 0
    rejected_unsafe: int = 0
    no_match: int = 0
    ok: bool = True  # False when the cycle was abandoned on a transport error


COUNTER_NAMES = ("events_sent", "applied", "rejected_unsafe", "no_match_remote",
                 "duplicate_records", "buffer_drops", "polls_ok", "polls_failed",
                 "pings_ok", "pings_failed", "fallbacks_dwell", "fallbacks_comm_down")


class AgentCore:
    def __init__(self, models: list[ModelDef], config: AgentConfig, clock=None):
        config.validate()
        self.config = config
        self.clock = clock if clock is not None else SystemClock()
        self._lock = threading.RLock()
        now = self.clock.now_ms()
        self.instances: dict[bytes, EngineInstance] = {}
        for model in models:
            if model.uid in self.instances:
                raise ConfigError(f"duplicate model uid {model.uid.hex()}")
            self.instances[model.uid] = engine_start(model, now)
        if not self.instances:
            raise ConfigError("agent hosts no models")
        self._seq: dict[bytes, int] = {uid: 0 for uid in self.instances}
        self._outbound: deque[wire.SyncMessage] = deque()
        self.comm = CommStatus()
        self.comm.last_ok_ms = now
        self._down_epoch_handled = 0
        self.counters = {name: 0 for name in COUNTER_NAMES}
        self._journal: deque[dict] = deque(maxlen=config.journal_limit)
        self._journal_id = 0
        self._subscribers: list = []
        # harness hook: called with the SyncMessage evicted on buffer overflow
        self.buffer_drop_hook = None

    @property
    def uids(self) -> list[bytes]:
        return list(self.instances)

    # -- local events -------------------------------------------------------

    def on_local_event(self, model_uid: bytes, event: str, now_ms: int | None = None):
        """Apply a locally raised event; on a transition, queue one EVENT frame for push."""
        now = self.clock.now_ms() if now_ms is None else now_ms
        with self._lock:
            inst = self.instances.get(model_uid)
            if inst is None:
                raise UnknownModel(f"model {model_uid.hex()} is not hosted here")
            outcome = inst.raise_event(event, LOCAL, now)
            if isinstance(outcome, Transitioned):
                self._journal_append({
                    "type": "state_change", "uid": model_uid.hex(),
                    "from": outcome.from_state, "to": outcome.to_state,
                    "event": event, "origin": "local", "t_ms": now})
                seq = self._seq[model_uid] + 1
                self._seq[model_uid] = seq
                state = inst.active_state
                safety = ""
                if state.safety_class is SafetyClass.TRANSIENT_SAFE:
                    safety = state.fallback_target or ""
                msg = wire.event_message(model_uid, seq, now, event, safety)
                if len(self._outbound) >= self.config.outbound_buffer:
                    dropped = self._outbound.popleft()  # oldest-drop, surfaced in counters
                    self.counters["buffer_drops"] += 1
                    if self.buffer_drop_hook is not None:
                        self.buffer_drop_hook(dropped)
                self._outbound.append(msg)
            return outcome

    def flush_outbound(self, transport) -> int:
        """Push buffered EVENT frames in order; stops (and keeps the rest) on failure."""
        with self._lock:
            pending = list(self._outbound)
        if not pending:
            return 0
        sent = transport.send_events(pending)
        if sent:
            with self._lock:
                for _ in range(sent):
                    self._outbound.popleft()
                self.counters["events_sent"] += sent
        return sent

    def outbound_depth(self) -> int:
        with self._lock:
            return len(self._outbound)

    def outbound_messages(self) -> list[wire.SyncMessage]:
        with self._lock:
            return list(self._outbound)

    def last_sequence(self, model_uid: bytes) -> int:
        with self._lock:
            return self._seq[model_uid]

    # -- remote events ------------------------------------------------------

    def poll_cycle(self, transport, now_ms: int | None = None) -> AppliedReport:
        """One poll pass over every hosted model; abandoned on the first transport error."""
        report = AppliedReport()
        for uid in list(self.instances):
            try:
                resp = transport.poll(uid)
            except TransportError as exc:
                logger.debug("poll failed for %s: %s", uid.hex(), exc)
                self.record_poll_failure()
                report.ok = False
                return report
            now = self.clock.now_ms() if now_ms is None else now_ms
            batch = self.apply_records(uid, resp.records, now)
            report.applied += batch.applied
            report.rejected_unsafe += batch.rejected_unsafe
            report.no_match += batch.no_match
        self.record_poll_success()
        return report

    def apply_records(self, model_uid: bytes, records, now_ms: int) -> AppliedReport:
        """Apply one POLL_RESP batch in order, atomically w.r.t. local event intake."""
        report = AppliedReport()
        with self._lock:
            inst = self.instances.get(model_uid)
            if inst is None:
                raise UnknownModel(f"model {model_uid.hex()} is not hosted here")
            for rec in records:
                last = inst.applied_seq.get(rec.origin_uid, 0)
                if rec.origin_sequence < last:
                    self.counters["duplicate_records"] += 1
                    self._journal_append({
                        "type": "duplicate_record", "uid": model_uid.hex(),
                        "event": rec.target_local_event,
                        "origin_uid": rec.origin_uid.hex(),
                        "origin_seq": rec.origin_sequence, "t_ms": now_ms})
                    continue
                inst.applied_seq[rec.origin_uid] = rec.origin_sequence
                origin = Remote(rec.safety_field or None)
                outcome = inst.raise_event(rec.target_local_event, origin, now_ms)
                if isinstance(outcome, Transitioned):
                    report.applied += 1
                    self.counters["applied"] += 1
                    self._journal_append({
                        "type": "state_change", "uid": model_uid.hex(),
                        "from": outcome.from_state, "to": outcome.to_state,
                        "event": rec.target_local_event, "origin": "remote",
                        "origin_uid": rec.origin_uid.hex(),
                        "origin_seq": rec.origin_sequence, "t_ms": now_ms})
                elif isinstance(outcome, RejectedUnsafe):
                    report.rejected_unsafe += 1
                    self.counters["rejected_unsafe"] += 1
                    self._journal_append({
                        "type": "rejected_unsafe", "uid": model_uid.hex(),
                        "event": rec.target_local_event, "reason": outcome.reason,
                        "origin_uid": rec.origin_uid.hex(),
                        "origin_seq": rec.origin_sequence, "t_ms": now_ms})
                elif isinstance(outcome, NoMatch):
                    report.no_match += 1
                    self.counters["no_match_remote"] += 1
                    self._journal_append({
                        "type": "remote_no_match", "uid": model_uid.hex(),
                        "event": rec.target_local_event,
                        "origin_uid": rec.origin_uid.hex(),
                        "origin_seq": rec.origin_sequence, "t_ms": now_ms})
        return report

    # -- keepalive ----------------------------------------------------------

    def ping_cycle(self, transport) -> bool:
        try:
            transport.send_pings(self.uids)
        except TransportError:
            self.record_ping_failure()
            return False
        self.record_ping_success()
        return True

    def record_poll_success(self) -> None:
        with self._lock:
            self.counters["polls_ok"] += 1
            self.comm.poll_failures = 0
            self.comm.last_ok_ms = self.clock.now_ms()
            self._recompute_comm()

    def record_poll_failure(self) -> None:
        with self._lock:
            self.counters["polls_failed"] += 1
            self.comm.poll_failures += 1
            self._recompute_comm()

    def record_ping_success(self) -> None:
        with self._lock:
            self.counters["pings_ok"] += 1
            self.comm.ping_failures = 0
            self.comm.last_ok_ms = self.clock.now_ms()
            self._recompute_comm()

    def record_ping_failure(self) -> None:
        with self._lock:
            self.counters["pings_failed"] += 1
            self.comm.ping_failures += 1
            self._recompute_comm()

    def _recompute_comm(self) -> None:
        worst = self.comm.consecutive_failures
        if worst >= self.config.comm_fail_threshold:
            new = CommState.DOWN
        elif worst > 0:
            new = CommState.DEGRADED
        else:
            new = CommState.CONNECTED
        if new is not self.comm.state:
            if new is CommState.DOWN:
                self.comm.down_epoch += 1
            self.comm.state = new
            self._journal_append({
                "type": "comm_change", "state": new.value,
                "consecutive_failures": worst, "t_ms": self.clock.now_ms()})

    # -- supervisor ---------------------------------------------------------

    def supervise(self, now_ms: int | None = None) -> list[tuple[bytes, FallbackFired, str]]:
        """Dwell enforcement every tick; forced fallback on the transition into Down."""
        now = self.clock.now_ms() if now_ms is None else now_ms
        fired: list[tuple[bytes, FallbackFired, str]] = []
        with self._lock:
            for uid, inst in self.instances.items():
                fb = inst.tick(now)
                if fb is not None:
                    fired.append((uid, fb, "dwell"))
                    self.counters["fallbacks_dwell"] += 1
            if (self.comm.state is CommState.DOWN
                    and self._down_epoch_handled < self.comm.down_epoch):
                self._down_epoch_handled = self.comm.down_epoch
                for uid, inst in self.instances.items():
                    fb = inst.force_fallback(now)
                    if fb is not None:
                        fired.append((uid, fb, "comm_down"))
                        self.counters["fallbacks_comm_down"] += 1
            for uid, fb, cause in fired:
                self._journal_append({
                    "type": "fallback", "uid": uid.hex(), "from": fb.from_state,
                    "to": fb.to_state, "cause": cause, "t_ms": now})
        return fired

    # -- inspection ---------------------------------------------------------

    def state_view(self, model_uid: bytes) -> dict:
        with self._lock:
            inst = self.instances.get(model_uid)
            if inst is None:
                raise UnknownModel(f"model {model_uid.hex()} is not hosted here")
            now = self.clock.now_ms()
            return {
                "uid": model_uid.hex(),
                "active": inst.active,
                "safety_class": inst.active_state.safety_class.value,
                "dwell_remaining_ms": inst.dwell_remaining_ms(now),
                "pending_fallback": inst.pending_fallback,
                "comm": {
                    "state": self.comm.state.value,
                    "consecutive_failures": self.comm.consecutive_failures,
                },
            }

    def models_view(self, detail: bool = False) -> list[dict]:
        out = []
        with self._lock:
            for uid, inst in self.instances.items():
                entry = {"uid": uid.hex(), "name": inst.model.display_name}
                if detail:
                    entry["initial"] = inst.model.initial
                    entry["states"] = [
                        {"name": s.name, "safety_class": s.safety_class.value,
                         "max_dwell_ms": s.max_dwell_ms,
                         "fallback": s.fallback_target}
                        for s in inst.model.states]
                    entry["transitions"] = [
                        {"from": t.source, "to": t.target, "on": t.trigger}
                        for t in inst.model.transitions]
                out.append(entry)
        return out

    def journal_since(self, since_id: int) -> list[dict]:
        with self._lock:
            return [e for e in self._journal if e["id"] > since_id]

    def subscribe(self):
        import queue as _queue
        q = _queue.SimpleQueue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _journal_append(self, entry: dict) -> None:
        self._journal_id += 1
        entry["id"] = self._journal_id
        self._journal.append(entry)
        if entry["type"] in ("state_change", "fallback", "comm_change"):
            for q in self._subscribers:
                q.put(entry)

    def counters_snapshot(self) -> dict:
        with self._lock:
            return dict(self.counters)


class SocketTransport:
    """Persistent framed-TCP channels to the hub, with reconnect handled by callers
    retrying; fail_push/fail_poll simulate link loss for fault-injection runs."""

    def __init__(self, config: AgentConfig, timeout_s: float = 2.0):
        if config.hub_push_address is None or config.hub_poll_address is None:
            raise ConfigError("hub push and poll addresses are required")
        self._push_addr = config.hub_push_address
        self._poll_addr = config.hub_poll_address
        self._cipher = Aes128Ecb(config.key)
        self._max_frame = config.max_frame
        self._timeout = timeout_s
        self._push_sock: socket.socket | None = None
        self._poll_sock: socket.socket | None = None
        self._poll_stream = None
        self._push_lock = threading.Lock()
        self._poll_lock = threading.Lock()
        self.fail_push = False
        self.fail_poll = False

    # -- push channel -------------------------------------------------------

    def _ensure_push(self) -> socket.socket:
        if self.fail_push:
            self._drop_push()
            raise TransportError("push link down (injected)")
        if self._push_sock is None:
            try:
                self._push_sock = socket.create_connection(self._push_addr, self._timeout)
                self._push_sock.settimeout(self._timeout)
            except OSError as exc:
                self._push_sock = None
                raise TransportError(f"push connect failed: {exc}") from exc
        return self._push_sock

    def send_events(self, messages) -> int:
        """Send in order; returns how many made it out before the first failure."""
        sent = 0
        with self._push_lock:
            for msg in messages:
                try:
                    sock = self._ensure_push()
                    sock.sendall(wire.encode_with_cipher(msg, self._cipher))
                    sent += 1
                except (TransportError, OSError):
                    self._drop_push()
                    break
        return sent

    def send_pings(self, uids) -> None:
        with self._push_lock:
            try:
                sock = self._ensure_push()
                now = 0
                for uid in uids:
                    sock.sendall(wire.encode_with_cipher(
                        wire.ping_message(uid, now), self._cipher))
            except (TransportError, OSError) as exc:
                self._drop_push()
                raise TransportError(f"ping failed: {exc}") from exc

    def _drop_push(self) -> None:
        if self._push_sock is not None:
            try:
                self._push_sock.close()
            except OSError:
                pass
            self._push_sock = None

    # -- poll channel -------------------------------------------------------

    def _ensure_poll(self):
        if self.fail_poll:
            self._drop_poll()
            raise TransportError("poll link down (injected)")
        if self._poll_sock is None:
            try:
                self._poll_sock = socket.create_connection(self._poll_addr, self._timeout)
                self._poll_sock.settimeout(self._timeout)
                self._poll_stream = self._poll_sock.makefile("rb")
            except OSError as exc:
                self._poll_sock = None
                self._poll_stream = None
                raise TransportError(f"poll connect failed: {exc}") from exc
        return self._poll_sock, self._poll_stream

    def poll(self, uid: bytes) -> wire.SyncMessage:
        with self._poll_lock:
            try:
                sock, stream = self._ensure_poll()
                sock.sendall(wire.encode_with_cipher(wire.poll_request(uid, 0), self._cipher))
                frame = wire.read_frame(stream, self._max_frame)
                resp = wire.decode_with_cipher(frame, self._cipher)
            except (TransportError, OSError, wire.WireError) as exc:
                self._drop_poll()
                raise TransportError(f"poll failed: {exc}") from exc
        if resp.msg_type != wire.MSG_POLL_RESP:
            raise TransportError(f"unexpected reply type {resp.msg_type}")
        return resp

    def _drop_poll(self) -> None:
        if self._poll_stream is not None:
            try:
                self._poll_stream.close()
            except OSError:
                pass
            self._poll_stream = None
        if self._poll_sock is not None:
            try:
                self._poll_sock.close()
            except OSError:
                pass
            self._poll_sock = None

    def close(self) -> None:
        with self._push_lock:
            self._drop_push()
        with self._poll_lock:
            self._drop_poll()


class Agent:
    """Threaded runtime: push writer with backoff, poll loop, and supervisor."""

    def __init__(self, config: AgentConfig, clock=None, transport=None,
                 core: AgentCore | None = None):
        if core is None:
            from .modelfile import load_model
            models = [load_model(p) for p in config.model_paths]
            core = AgentCore(models, config, clock)
        self.core = core
        self.config = config
        self.transport = transport if transport is not None else SocketTransport(config)
        self._stop = threading.Event()
        self._push_wake = threading.Event()
        self._threads: list[threading.Thread] = []

    def start(self) -> "Agent":
        for target, name in ((self._push_loop, "push"), (self._poll_loop, "poll"),
                             (self._supervise_loop, "supervise")):
            t = threading.Thread(target=target, name=f"{self.config.name}-{name}", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        if self._stop.is_set():
            return
        self._stop.set()
        self._push_wake.set()
        for t in self._threads:
            t.join(timeout=3)
        self.transport.close()

    def on_local_event(self, model_uid: bytes, event: str):
        outcome = self.core.on_local_event(model_uid, event)
        self._push_wake.set()
        return outcome

    def _push_loop(self) -> None:
        cfg = self.config
        clock = self.core.clock
        next_ping = clock.now_ms() + cfg.ping_period_ms
        backoff_ms = 0
        while not self._stop.is_set():
            self._push_wake.wait(timeout=0.02)
            self._push_wake.clear()
            if self._stop.is_set():
                break
            now = clock.now_ms()
            if backoff_ms > 0:
                backoff_ms = max(0, backoff_ms - 20)
                continue
            failed = False
            if now >= next_ping:
                next_ping = now + cfg.ping_period_ms
                if not self.core.ping_cycle(self.transport):
                    failed = True
            pending = self.core.outbound_depth()
            if pending and not failed:
                sent = self.core.flush_outbound(self.transport)
                if sent < pending:
                    failed = True
            if failed:
                backoff_ms = min(
                    cfg.reconnect_max_ms,
                    max(cfg.reconnect_initial_ms, backoff_ms * 2))

    def _poll_loop(self) -> None:
        cfg = self.config
        clock = self.core.clock
        next_at = clock.now_ms() + cfg.poll_interval_ms
        while not self._stop.is_set():
            now = clock.now_ms()
            wait_ms = next_at - now
            if wait_ms > 0:
                self._stop.wait(min(wait_ms, 20) / 1000.0)
                continue
            next_at += cfg.poll_interval_ms
            if next_at < now:  # fell behind; re-anchor rather than bursting
                next_at = now + cfg.poll_interval_ms
            self.core.poll_cycle(self.transport)

    def _supervise_loop(self) -> None:
        period_s = self.config.supervisor_period_ms / 1000.0
        while not self._stop.wait(period_s):
            self.core.supervise()
