"""Wire format for the event plane.

Every frame is:

    length  u32 big-endian, number of bytes following (kind + body)
    kind    u8
    body    kind-specific

Kinds: 0x01 HELLO (role u8 + identity string), 0x02 SUB (topic prefix
string), 0x03 PUB (topic string + seq u64 + ts_micros u64 + payload bytes),
0x04 PING, 0x05 PONG. Strings are u16-length-prefixed UTF-8; all integers
big-endian. Frames above 1 MiB are protocol violations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional

MAX_FRAME = 1 << 20

KIND_HELLO = 0x01
KIND_SUB = 0x02
KIND_PUB = 0x03
KIND_PING = 0x04
KIND_PONG = 0x05

ROLE_PUBLISHER = 0x01
ROLE_SUBSCRIBER = 0x02


class ProtocolViolation(Exception):
    pass


@dataclass(frozen=True)
class MonitoringEvent:
    """One published record as seen on the wire."""

    topic: str
    ts_micros: int
    seq: int
    payload: str

    @property
    def severity(self) -> str:
        parts = self.topic.split("/")
        return parts[2] if len(parts) >= 3 else ""

    def to_json(self) -> dict:
        return {
            "topic": self.topic,
            "ts_micros": self.ts_micros,
            "seq": self.seq,
            "payload": self.payload,
        }


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ProtocolViolation("string exceeds u16 length prefix")
    return struct.pack(">H", len(raw)) + raw


def _unpack_string(body: bytes, pos: int) -> tuple[str, int]:
    if pos + 2 > len(body):
        raise ProtocolViolation("truncated string length")
    (n,) = struct.unpack_from(">H", body, pos)
    pos += 2
    if pos + n > len(body):
        raise ProtocolViolation("truncated string")
    return body[pos : pos + n].decode("utf-8"), pos + n


def encode_frame(kind: int, body: bytes = b"") -> bytes:
    length = 1 + len(body)
    if length > MAX_FRAME:
        raise ProtocolViolation(f"frame of {length} bytes exceeds 1 MiB")
    return struct.pack(">IB", length, kind) + body


def encode_hello(role: int, identity: str) -> bytes:
    return encode_frame(KIND_HELLO, struct.pack(">B", role) + _pack_string(identity))


def encode_sub(prefix: str) -> bytes:
    return encode_frame(KIND_SUB, _pack_string(prefix))


def encode_pub(event: MonitoringEvent) -> bytes:
    body = (
        _pack_string(event.topic)
        + struct.pack(">QQ", event.seq, event.ts_micros)
        + event.payload.encode("utf-8")
    )
    return encode_frame(KIND_PUB, body)


def decode_hello(body: bytes) -> tuple[int, str]:
    if len(body) < 1:
        raise ProtocolViolation("empty HELLO body")
    role = body[0]
    identity, pos = _unpack_string(body, 1)
    if pos != len(body):
        raise ProtocolViolation("trailing bytes in HELLO")
    return role, identity


def decode_sub(body: bytes) -> str:
    prefix, pos = _unpack_string(body, 0)
    if pos != len(body):
        raise ProtocolViolation("trailing bytes in SUB")
    return prefix


def decode_pub(body: bytes) -> MonitoringEvent:
    topic, pos = _unpack_string(body, 0)
    if pos + 16 > len(body):
        raise ProtocolViolation("truncated PUB body")
    seq, ts_micros = struct.unpack_from(">QQ", body, pos)
    payload = body[pos + 16 :].decode("utf-8")
    return MonitoringEvent(topic=topic, ts_micros=ts_micros, seq=seq, payload=payload)


def read_frame(fp: BinaryIO) -> Optional[tuple[int, bytes]]:
    """Read one frame from a blocking file object; None on clean EOF."""
    header = fp.read(4)
    if not header:
        return None
    if len(header) < 4:
        raise ProtocolViolation("truncated frame length")
    (length,) = struct.unpack(">I", header)
    if length == 0 or length > MAX_FRAME:
        raise ProtocolViolation(f"bad frame length {length}")
    rest = fp.read(length)
    if len(rest) < length:
        raise ProtocolViolation("truncated frame body")
    return rest[0], rest[1:]
