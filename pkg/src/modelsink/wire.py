"""Framed, encrypted wire format for push, ping, and poll traffic.

Frame layout: 4-byte big-endian ciphertext length, then the ciphertext.
Ciphertext is AES-128-ECB over the PKCS#7-padded plaintext:

    version(1) | msg_type(1) | model_uid(16) | sequence(8) | timestamp(8)
    | safety_len(1)+bytes | event_len(1)+bytes | record_count(2)
    | repeated records: uid(16) | seq(8) | safety_len(1)+bytes | event_len(1)+bytes

All integers are big-endian. Strings are UTF-8 with 1-byte length prefixes,
so each is capped at 255 bytes. The safety field names the open-loop safe
state a receiver must queue before it may enter a transient-safe state.

Decoding treats any post-decryption inconsistency (bad padding, fields
running past the plaintext, leftover bytes, undecodable strings) as
BadPadding: all of those mean wrong key or corruption, not a different
protocol version. BadVersion/BadType are reserved for structurally sound
plaintexts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .aes import Aes128Ecb, PaddingError, pkcs7_pad, pkcs7_unpad

MSG_EVENT = 1
MSG_PING = 2
MSG_POLL_REQ = 3
MSG_POLL_RESP = 4
_MSG_TYPES = (MSG_EVENT, MSG_PING, MSG_POLL_REQ, MSG_POLL_RESP)

DEFAULT_MAX_FRAME = 1 << 20  # 1 MiB
_HEADER = struct.Struct(">BB16sQQ")


class WireError(Exception):
    pass


class FieldTooLong(WireError):
    pass


class TooManyRecords(WireError):
    pass


class BadPadding(WireError):
    """Could not recover a plaintext: wrong key or corrupted frame."""


class Truncated(WireError):
    pass


class BadVersion(WireError):
    pass


class BadType(WireError):
    pass


class FrameTooLarge(WireError):
    pass


class StreamClosed(WireError):
    pass


@dataclass(frozen=True)
class EventRecord:
    target_local_event: str
    safety_field: str
    origin_uid: bytes
    origin_sequence: int


@dataclass(frozen=True)
class SyncMessage:
    msg_type: int
    model_uid: bytes
    sequence: int
    timestamp_ms: int
    safety_field: str = ""
    event_name: str = ""
    records: tuple[EventRecord, ...] = ()
    version: int = 1


def event_message(model_uid: bytes, sequence: int, timestamp_ms: int,
                  event_name: str, safety_field: str = "") -> SyncMessage:
    return SyncMessage(MSG_EVENT, model_uid, sequence, timestamp_ms,
                       safety_field=safety_field, event_name=event_name)


def ping_message(model_uid: bytes, timestamp_ms: int) -> SyncMessage:
    return SyncMessage(MSG_PING, model_uid, 0, timestamp_ms)


def poll_request(model_uid: bytes, timestamp_ms: int) -> SyncMessage:
    return SyncMessage(MSG_POLL_REQ, model_uid, 0, timestamp_ms)


def poll_response(model_uid: bytes, timestamp_ms: int,
                  records: tuple[EventRecord, ...]) -> SyncMessage:
    return SyncMessage(MSG_POLL_RESP, model_uid, 0, timestamp_ms, records=records)


def _pack_string(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 255:
        raise FieldTooLong(f"string field is {len(raw)} bytes, limit 255")
    return bytes([len(raw)]) + raw


def pack_plaintext(msg: SyncMessage) -> bytes:
    if len(msg.model_uid) != 16:
        raise WireError("model_uid must be 16 bytes")
    if len(msg.records) > 65535:
        raise TooManyRecords(f"{len(msg.records)} records, limit 65535")
    parts = [
        _HEADER.pack(msg.version, msg.msg_type, msg.model_uid,
                     msg.sequence, msg.timestamp_ms),
        _pack_string(msg.safety_field),
        _pack_string(msg.event_name),
        struct.pack(">H", len(msg.records)),
    ]
    for rec in msg.records:
        if len(rec.origin_uid) != 16:
            raise WireError("record origin_uid must be 16 bytes")
        parts.append(struct.pack(">16sQ", rec.origin_uid, rec.origin_sequence))
        parts.append(_pack_string(rec.safety_field))
        parts.append(_pack_string(rec.target_local_event))
    return b"".join(parts)


class _Reader:
    """Sequential plaintext reader; running past the end means corruption."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise BadPadding("plaintext shorter than its declared fields")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def string(self) -> str:
        n = self.take(1)[0]
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BadPadding("string field is not valid UTF-8") from exc


def unpack_plaintext(data: bytes) -> SyncMessage:
    r = _Reader(data)
    version, msg_type, uid, sequence, timestamp = _HEADER.unpack(r.take(_HEADER.size))
    safety = r.string()
    event = r.string()
    (count,) = struct.unpack(">H", r.take(2))
    records = []
    for _ in range(count):
        rec_uid, rec_seq = struct.unpack(">16sQ", r.take(24))
        rec_safety = r.string()
        rec_event = r.string()
        records.append(EventRecord(rec_event, rec_safety, rec_uid, rec_seq))
    if r.pos != len(data):
        raise BadPadding("plaintext has trailing bytes beyond its fields")
    if version != 1:
        raise BadVersion(f"unsupported version {version}")
    if msg_type not in _MSG_TYPES:
        raise BadType(f"unknown message type {msg_type}")
    return SyncMessage(msg_type, uid, sequence, timestamp,
                       safety_field=safety, event_name=event,
                       records=tuple(records), version=version)


def encode_with_cipher(msg: SyncMessage, cipher) -> bytes:
    ciphertext = cipher.encrypt(pkcs7_pad(pack_plaintext(msg)))
    return struct.pack(">I", len(ciphertext)) + ciphertext


def decode_with_cipher(data: bytes, cipher) -> SyncMessage:
    if len(data) < 4:
        raise Truncated("frame shorter than its length prefix")
    (length,) = struct.unpack(">I", data[:4])
    if len(data) - 4 < length:
        raise Truncated(f"frame declares {length} bytes, only {len(data) - 4} present")
    # trailing bytes beyond the declared length belong to the next frame
    ciphertext = data[4:4 + length]
    try:
        plaintext = pkcs7_unpad(cipher.decrypt(ciphertext))
    except (PaddingError, ValueError) as exc:
        raise BadPadding(str(exc)) from exc
    return unpack_plaintext(plaintext)


def encode_frame(msg: SyncMessage, key: bytes) -> bytes:
    return encode_with_cipher(msg, Aes128Ecb(key))


def decode_frame(data: bytes, key: bytes) -> SyncMessage:
    return decode_with_cipher(data, Aes128Ecb(key))


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise StreamClosed(f"stream ended with {remaining} of {n} bytes missing")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream, max_frame: int = DEFAULT_MAX_FRAME) -> bytes:
    """Read one complete frame (length prefix included) from a blocking binary stream."""
    prefix = _read_exact(stream, 4)
    (length,) = struct.unpack(">I", prefix)
    if length > max_frame:
        raise FrameTooLarge(f"declared frame of {length} bytes exceeds cap {max_frame}")
    return prefix + _read_exact(stream, length)


def write_frame(stream, frame: bytes, max_frame: int = DEFAULT_MAX_FRAME) -> None:
    """Write one encoded frame in a single call; callers serialize per-stream access."""
    if len(frame) < 4:
        raise WireError("not a frame: missing length prefix")
    (length,) = struct.unpack(">I", frame[:4])
    if length != len(frame) - 4:
        raise WireError("frame length prefix does not match payload")
    if length > max_frame:
        raise FrameTooLarge(f"frame of {length} bytes exceeds cap {max_frame}")
    stream.write(frame)
    flush = getattr(stream, "flush", None)
    if flush is not None:
        flush()
