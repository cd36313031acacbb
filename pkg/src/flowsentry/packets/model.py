"""Parsed packet representation shared by the capture reader, the traffic
synthesizer and the monitoring engine.

Only IPv4 headers are modelled. Ports are 0 for anything that is not TCP or
UDP, and the TCP flag byte is 0 for anything that is not TCP.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

# Transport protocol numbers we care about.
PROTO_TCP = 6
PROTO_UDP = 17
PROTO_ICMP = 1

# TCP flag bits (low byte of the flags field).
TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10

TCP_FLAG_BITS = {"FIN": TCP_FIN, "SYN": TCP_SYN, "RST": TCP_RST, "ACK": TCP_ACK}

MICROS_PER_SECOND = 1_000_000


@dataclass(frozen=True)
class PacketRecord:
    """One captured (or synthesized) packet, headers only."""

    ts_sec: int
    ts_usec: int
    src_ip: str
    dst_ip: str
    ip_proto: int
    src_port: int = 0
    dst_port: int = 0
    tcp_flags: int = 0
    wire_len: int = 0

    @property
    def ts_micros(self) -> int:
        return self.ts_sec * MICROS_PER_SECOND + self.ts_usec

    def flag(self, bit: int) -> bool:
        return bool(self.tcp_flags & bit)


def ip_to_bytes(addr: str) -> bytes:
    """Dotted-quad IPv4 address to its 4 network-order bytes."""
    return socket.inet_aton(addr)


def ip_from_bytes(raw: bytes) -> str:
    return socket.inet_ntoa(raw)


def format_ts(ts_sec: int, ts_usec: int) -> str:
    """Canonical text form of a capture timestamp: seconds.microseconds."""
    return f"{ts_sec}.{ts_usec:06d}"


# Packet-field selectors usable in flow keys and metric key scopes.
# Encoded widths: IPv4 address 4 bytes, port 2 bytes, protocol 1 byte,
# all big-endian, concatenated in selector order.
FIELD_SELECTORS = ("src_ip", "dst_ip", "src_port", "dst_port", "ip_proto")


def encode_fields(pkt: PacketRecord, fields: tuple[str, ...]) -> bytes:
    """Canonical byte encoding of the selected packet fields."""
    parts = []
    for name in fields:
        if name == "src_ip":
            parts.append(ip_to_bytes(pkt.src_ip))
        elif name == "dst_ip":
            parts.append(ip_to_bytes(pkt.dst_ip))
        elif name == "src_port":
            parts.append(struct.pack(">H", pkt.src_port))
        elif name == "dst_port":
            parts.append(struct.pack(">H", pkt.dst_port))
        elif name == "ip_proto":
            parts.append(struct.pack(">B", pkt.ip_proto))
        else:
            raise ValueError(f"unknown packet field selector: {name}")
    return b"".join(parts)


def render_fields(pkt: PacketRecord, fields: tuple[str, ...]) -> str:
    """Human-readable form of the selected fields, '-' separated."""
    parts = []
    for name in fields:
        if name == "src_ip":
            parts.append(pkt.src_ip)
        elif name == "dst_ip":
            parts.append(pkt.dst_ip)
        elif name == "src_port":
            parts.append(str(pkt.src_port))
        elif name == "dst_port":
            parts.append(str(pkt.dst_port))
        elif name == "ip_proto":
            parts.append(str(pkt.ip_proto))
        else:
            raise ValueError(f"unknown packet field selector: {name}")
    return "-".join(parts)
