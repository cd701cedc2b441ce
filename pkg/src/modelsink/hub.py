"""The hub: push intake, normalization, mapping, broadcast queue, poll service.

HubCore is the transport-free pipeline (used directly by the simulated-clock
harness); HubServer wraps it with the framed TCP listeners (push port, poll
port) and a local-only admin channel speaking single-line commands
(``stats``, ``reload-mapping``).
"""

from __future__ import annotations

import enum
import logging
import socket
import socketserver
import threading
from dataclasses import dataclass
from pathlib import Path

from . import wire
from .aes import Aes128Ecb
from .chasing_queue import ChasingQueue, QueueFull, UnknownConsumer
from .clock import SystemClock
from .mapping import (
    GenericEvent,
    MappingConfigError,
    MappingTable,
    UnknownEvent,
    load_mapping,
    normalize,
    translate,
)

logger = logging.getLogger(__name__)


class BindError(Exception):
    pass


class ConfigError(Exception):
    pass


@dataclass
class HubConfig:
    consumer_uids: list[bytes]
    key: bytes = bytes(16)
    mapping_path: str | None = None
    listen_host: str = "127.0.0.1"
    push_port: int = 0          # 0 = ephemeral
    poll_port: int = 0
    admin_port: int = 0
    batch_limit: int = 32
    queue_capacity: int = 65536
    ping_timeout_ms: int = 3000  # 3x the default client ping period
    max_frame: int = wire.DEFAULT_MAX_FRAME

    def validate(self) -> None:
        if not self.consumer_uids:
            raise ConfigError("consumer_uids must not be empty")
        if len(set(self.consumer_uids)) != len(self.consumer_uids):
            raise ConfigError("consumer_uids must be distinct")
        if any(len(u) != 16 for u in self.consumer_uids):
            raise ConfigError("consumer uids must be 16 bytes")
        if len(self.key) != 16:
            raise ConfigError("key must be 16 bytes")
        if self.batch_limit < 1:
            raise ConfigError("batch_limit must be >= 1")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")


class Disposition(enum.Enum):
    ENQUEUED = "enqueued"
    DROPPED_UNKNOWN = "dropped_unknown"
    DROPPED_DUPLICATE = "dropped_duplicate"
    DROPPED_QUEUE_FULL = "dropped_queue_full"


@dataclass(frozen=True)
class ConnectionDown:
    origin_uid: bytes


class HubStats:
    """Monotone counters; thread-safe via one small lock."""

    FIELDS = ("frames_in", "frames_out", "events_normalized", "unknown_events",
              "rejected_unsafe", "dedup_drops", "queue_full_drops",
              "suppressed_echo", "no_route_skips", "records_delivered",
              "connections_closed", "decode_errors")

    def __init__(self):
        self._lock = threading.Lock()
        for name in self.FIELDS:
            setattr(self, name, 0)

    def bump(self, name: str, by: int = 1) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + by)

    def snapshot(self) -> dict:
        with self._lock:
            return {name: getattr(self, name) for name in self.FIELDS}


class HubCore:
    """Decode-side pipeline: dedup, normalize, enqueue; poll-side: translate and batch."""

    def __init__(self, config: HubConfig, mapping: MappingTable, clock=None):
        config.validate()
        self.config = config
        self.clock = clock if clock is not None else SystemClock()
        self.stats = HubStats()
        self.queue = ChasingQueue(config.consumer_uids, config.queue_capacity)
        self._mapping = mapping
        self._last_seq: dict[bytes, int] = {}
        self._last_seen: dict[bytes, int] = {}
        self._seen_lock = threading.Lock()
        self._poll_locks = {uid: threading.Lock() for uid in config.consumer_uids}
        # per-consumer accounting, for end-to-end loss audits
        self.per_consumer: dict[bytes, dict[str, int]] = {
            uid: {"consumed": 0, "echo": 0, "no_route": 0, "records_out": 0}
            for uid in config.consumer_uids}
        # harness hook: called with (msg, Disposition) after each EVENT frame
        self.disposition_hook = None

    @property
    def mapping(self) -> MappingTable:
        return self._mapping

    def reload_mapping(self, config_bytes: bytes) -> None:
        """Swap in a fresh table atomically; readers keep using whichever table they grabbed."""
        self._mapping = load_mapping(config_bytes)

    def note_alive(self, origin_uid: bytes) -> None:
        with self._seen_lock:
            self._last_seen[origin_uid] = self.clock.now_ms()

    def handle_event_frame(self, msg: wire.SyncMessage) -> Disposition:
        assert msg.msg_type == wire.MSG_EVENT
        disposition = self._handle_event(msg)
        if self.disposition_hook is not None:
            self.disposition_hook(msg, disposition)
        return disposition

    def _handle_event(self, msg: wire.SyncMessage) -> Disposition:
        self.note_alive(msg.model_uid)
        last = self._last_seq.get(msg.model_uid, 0)
        if msg.sequence <= last:
            self.stats.bump("dedup_drops")
            return Disposition.DROPPED_DUPLICATE
        self._last_seq[msg.model_uid] = msg.sequence
        table = self._mapping
        try:
            event = normalize(table, msg.model_uid, msg.event_name,
                              msg.sequence, msg.timestamp_ms)
        except UnknownEvent:
            self.stats.bump("unknown_events")
            logger.warning("unmapped event %r from %s dropped",
                           msg.event_name, msg.model_uid.hex())
            return Disposition.DROPPED_UNKNOWN
        try:
            self.queue.push(event)
        except QueueFull:
            self.stats.bump("queue_full_drops")
            logger.error("queue full, dropping %r from %s",
                         msg.event_name, msg.model_uid.hex())
            return Disposition.DROPPED_QUEUE_FULL
        self.stats.bump("events_normalized")
        return Disposition.ENQUEUED

    def serve_poll(self, requester_uid: bytes,
                   batch_limit_override: int | None = None) -> wire.SyncMessage:
        """Drain up to batch_limit queued messages for one consumer into a POLL_RESP.

        Echo (own origin) and unrouted messages are consumed and skipped so the
        queue can reclaim them. A message's translated list is never split
        across responses; response order is queue order, then config order
        within one message.
        """
        lock = self._poll_locks.get(requester_uid)
        if lock is None:
            raise UnknownConsumer(f"{requester_uid.hex()} is not a registered consumer")
        limit = batch_limit_override or self.config.batch_limit
        records: list[wire.EventRecord] = []
        table = self._mapping
        acct = self.per_consumer[requester_uid]
        with lock:
            consumed = 0
            while consumed < limit:
                event = self.queue.peek(requester_uid)
                if event is None:
                    break
                assert isinstance(event, GenericEvent)
                if event.origin_uid == requester_uid:
                    self.queue.poll(requester_uid)
                    consumed += 1
                    acct["consumed"] += 1
                    acct["echo"] += 1
                    self.stats.bump("suppressed_echo")
                    continue
                pairs = translate(table, event.topic, requester_uid)
                if not pairs:
                    self.queue.poll(requester_uid)
                    consumed += 1
                    acct["consumed"] += 1
                    acct["no_route"] += 1
                    self.stats.bump("no_route_skips")
                    continue
                if records and len(records) + len(pairs) > limit:
                    break  # leave it whole for the next poll
                self.queue.poll(requester_uid)
                consumed += 1
                acct["consumed"] += 1
                for local_event, safety in pairs:
                    records.append(wire.EventRecord(
                        local_event, safety, event.origin_uid, event.origin_sequence))
        acct["records_out"] += len(records)
        self.stats.bump("records_delivered", len(records))
        return wire.poll_response(requester_uid, self.clock.now_ms(), tuple(records))

    def keepalive_scan(self, now_ms: int | None = None) -> list[ConnectionDown]:
        """Report (once) every origin silent for longer than ping_timeout_ms."""
        now = self.clock.now_ms() if now_ms is None else now_ms
        down = []
        with self._seen_lock:
            for uid, seen in list(self._last_seen.items()):
                if now - seen > self.config.ping_timeout_ms:
                    del self._last_seen[uid]
                    down.append(ConnectionDown(uid))
        return down

    def stats_document(self) -> str:
        """Stats as one structured-text (TOML) document."""
        snap = self.stats.snapshot()
        lines = ["[stats]"]
        for name in HubStats.FIELDS:
            lines.append(f"{name} = {snap[name]}")
        lines.append(f"queue_depth = {self.queue.depth()}")
        lines.append("")
        lines.append("[last_seen_ms]")
        with self._seen_lock:
            for uid, seen in sorted(self._last_seen.items()):
                lines.append(f'"{uid.hex()}" = {seen}')
        return "\n".join(lines) + "\n"


class HubServer:
    """Two framed-TCP listeners plus the admin channel around one HubCore."""

    def __init__(self, config: HubConfig, clock=None, mapping: MappingTable | None = None):
        config.validate()
        if mapping is None:
            if config.mapping_path is None:
                mapping = MappingTable({}, {}, {})
            else:
                mapping = load_mapping(Path(config.mapping_path).read_bytes())
        self.core = HubCore(config, mapping, clock)
        self.config = config
        self._cipher = Aes128Ecb(config.key)
        self._push_srv: socketserver.ThreadingTCPServer | None = None
        self._poll_srv: socketserver.ThreadingTCPServer | None = None
        self._admin_srv: socketserver.ThreadingTCPServer | None = None
        self._threads: list[threading.Thread] = []
        self._conn_lock = threading.Lock()
        self._push_socks: dict[bytes, socket.socket] = {}
        self._stop = threading.Event()
        self._started = False

    # -- lifecycle --------------------------------------------------------

    def start(self) -> "HubServer":
        hub = self

        class PushHandler(socketserver.BaseRequestHandler):
            def handle(self):
                hub._serve_push(self.request)

        class PollHandler(socketserver.BaseRequestHandler):
            def handle(self):
                hub._serve_poll_conn(self.request)

        class AdminHandler(socketserver.BaseRequestHandler):
            def handle(self):
                hub._serve_admin(self.request)

        try:
            self._push_srv = self._make_server(self.config.push_port, PushHandler)
            self._poll_srv = self._make_server(self.config.poll_port, PollHandler)
            self._admin_srv = self._make_server(self.config.admin_port, AdminHandler,
                                                host="127.0.0.1")
        except OSError as exc:
            self.stop()
            raise BindError(str(exc)) from exc

        for srv, name in ((self._push_srv, "push"), (self._poll_srv, "poll"),
                          (self._admin_srv, "admin")):
            t = threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.05},
                                 name=f"hub-{name}", daemon=True)
            t.start()
            self._threads.append(t)
        t = threading.Thread(target=self._keepalive_loop, name="hub-keepalive", daemon=True)
        t.start()
        self._threads.append(t)
        self._started = True
        return self

    def _make_server(self, port, handler, host=None):
        server = socketserver.ThreadingTCPServer(
            (host or self.config.listen_host, port), handler, bind_and_activate=False)
        server.allow_reuse_address = True
        server.daemon_threads = True
        server.server_bind()
        server.server_activate()
        return server

    @property
    def push_port(self) -> int:
        return self._push_srv.server_address[1]

    @property
    def poll_port(self) -> int:
        return self._poll_srv.server_address[1]

    @property
    def admin_port(self) -> int:
        return self._admin_srv.server_address[1]

    def stop(self) -> None:
        """Idempotent: close listeners, then every live connection."""
        if self._stop.is_set():
            return
        self._stop.set()
        for srv in (self._push_srv, self._poll_srv, self._admin_srv):
            if srv is not None:
                srv.shutdown()
                srv.server_close()
        with self._conn_lock:
            socks = list(self._push_socks.values())
            self._push_socks.clear()
        for sock in socks:
            _quiet_close(sock)
        for t in self._threads:
            t.join(timeout=2)

    # -- connection handlers ----------------------------------------------

    def _serve_push(self, sock: socket.socket) -> None:
        stream = sock.makefile("rb")
        uids_seen: set[bytes] = set()
        try:
            while not self._stop.is_set():
                frame = wire.read_frame(stream, self.config.max_frame)
                self.core.stats.bump("frames_in")
                msg = wire.decode_with_cipher(frame, self._cipher)
                if msg.model_uid not in uids_seen:
                    uids_seen.add(msg.model_uid)
                    with self._conn_lock:
                        self._push_socks[msg.model_uid] = sock
                if msg.msg_type == wire.MSG_EVENT:
                    self.core.handle_event_frame(msg)
                elif msg.msg_type == wire.MSG_PING:
                    self.core.note_alive(msg.model_uid)
                else:
                    logger.warning("unexpected %d frame on push port", msg.msg_type)
        except wire.StreamClosed:
            pass
        except wire.WireError as exc:
            self.core.stats.bump("decode_errors")
            logger.warning("push connection dropped: %s", exc)
        except OSError:
            pass
        finally:
            stream.close()
            _quiet_close(sock)
            with self._conn_lock:
                for uid in uids_seen:
                    if self._push_socks.get(uid) is sock:
                        del self._push_socks[uid]

    def _serve_poll_conn(self, sock: socket.socket) -> None:
        stream = sock.makefile("rb")
        try:
            while not self._stop.is_set():
                frame = wire.read_frame(stream, self.config.max_frame)
                self.core.stats.bump("frames_in")
                msg = wire.decode_with_cipher(frame, self._cipher)
                if msg.msg_type != wire.MSG_POLL_REQ:
                    logger.warning("unexpected %d frame on poll port", msg.msg_type)
                    break
                try:
                    resp = self.core.serve_poll(msg.model_uid)
                except UnknownConsumer as exc:
                    logger.warning("poll rejected: %s", exc)
                    break
                sock.sendall(wire.encode_with_cipher(resp, self._cipher))
                self.core.stats.bump("frames_out")
        except wire.StreamClosed:
            pass
        except wire.WireError as exc:
            self.core.stats.bump("decode_errors")
            logger.warning("poll connection dropped: %s", exc)
        except OSError:
            pass
        finally:
            stream.close()
            _quiet_close(sock)

    def _serve_admin(self, sock: socket.socket) -> None:
        stream = sock.makefile("rb")
        try:
            line = stream.readline(256).decode("utf-8", "replace").strip()
            if line == "stats":
                sock.sendall(self.core.stats_document().encode())
            elif line == "reload-mapping":
                sock.sendall(self._reload_mapping().encode())
            else:
                sock.sendall(f"error: unknown command {line!r}\n".encode())
        except OSError:
            pass
        finally:
            stream.close()
            _quiet_close(sock)

    def _reload_mapping(self) -> str:
        if self.config.mapping_path is None:
            return "error: hub started without a mapping path\n"
        try:
            self.core.reload_mapping(Path(self.config.mapping_path).read_bytes())
        except (OSError, MappingConfigError) as exc:
            return f"error: {exc}\n"
        return "ok: mapping reloaded\n"

    def _keepalive_loop(self) -> None:
        interval = max(0.1, self.config.ping_timeout_ms / 3000.0)
        while not self._stop.wait(interval):
            for down in self.core.keepalive_scan():
                logger.info("connection down: %s", down.origin_uid.hex())
                self.core.stats.bump("connections_closed")
                with self._conn_lock:
                    sock = self._push_socks.pop(down.origin_uid, None)
                if sock is not None:
                    _quiet_close(sock)


def _quiet_close(sock: socket.socket) -> None:
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


def start(config: HubConfig, clock=None) -> HubServer:
    """Spin up a hub; raises BindError or MappingConfigError."""
    return HubServer(config, clock).start()


def stop(handle: HubServer) -> None:
    handle.stop()
