"""Deterministic traffic synthesis for the attack and baseline scenarios.

Every generator is a pure function of its spec (including the seed):
identical specs produce byte-identical captures. Timestamps start at a fixed
base and strictly increase by the configured inter-arrival gap.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .model import PROTO_TCP, TCP_ACK, TCP_PSH, TCP_SYN, PacketRecord

BASE_TS_SEC = 1_700_000_000
EPHEMERAL_LO = 49152
EPHEMERAL_HI = 65535

_SYN_WIRE_LEN = 54  # eth + ipv4 + tcp headers
_DATA_WIRE_LEN = 512


@dataclass(frozen=True)
class SynFloodSpec:
    attacker_ip: str = "10.0.0.1"
    victim_ip: str = "10.0.0.100"
    victim_port: int = 80
    count: int = 100
    inter_arrival_us: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.inter_arrival_us <= 0:
            raise ValueError("inter_arrival must be > 0")


@dataclass(frozen=True)
class PortScanSpec:
    scanner_ip: str = "10.0.0.2"
    victim_ip: str = "10.0.0.100"
    port_lo: int = 80
    port_hi: int = 99
    inter_arrival_us: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.port_hi < self.port_lo:
            raise ValueError("port range is empty")
        if self.inter_arrival_us <= 0:
            raise ValueError("inter_arrival must be > 0")


@dataclass(frozen=True)
class BenignSpec:
    flow_count: int = 10
    packets_per_flow: int = 8
    inter_arrival_us: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.flow_count < 1 or self.packets_per_flow < 1:
            raise ValueError("flow_count and packets_per_flow must be >= 1")
        if self.inter_arrival_us <= 0:
            raise ValueError("inter_arrival must be > 0")


TraceSpec = SynFloodSpec | PortScanSpec | BenignSpec


class _Clock:
    def __init__(self, step_us: int) -> None:
        self._now = BASE_TS_SEC * 1_000_000
        self._step = step_us

    def next(self) -> tuple[int, int]:
        self._now += self._step
        return self._now // 1_000_000, self._now % 1_000_000


def synthesize(spec: TraceSpec) -> list[PacketRecord]:
    if isinstance(spec, SynFloodSpec):
        return _syn_flood(spec)
    if isinstance(spec, PortScanSpec):
        return _port_scan(spec)
    if isinstance(spec, BenignSpec):
        return _benign(spec)
    raise TypeError(f"unknown trace spec {spec!r}")


def _syn_flood(spec: SynFloodSpec) -> list[PacketRecord]:
    rng = random.Random(spec.seed)
    clock = _Clock(spec.inter_arrival_us)
    packets = []
    for _ in range(spec.count):
        ts_sec, ts_usec = clock.next()
        packets.append(
            PacketRecord(
                ts_sec=ts_sec,
                ts_usec=ts_usec,
                src_ip=spec.attacker_ip,
                dst_ip=spec.victim_ip,
                ip_proto=PROTO_TCP,
                src_port=rng.randint(EPHEMERAL_LO, EPHEMERAL_HI),
                dst_port=spec.victim_port,
                tcp_flags=TCP_SYN,
                wire_len=_SYN_WIRE_LEN,
            )
        )
    return packets


def _port_scan(spec: PortScanSpec) -> list[PacketRecord]:
    rng = random.Random(spec.seed)
    clock = _Clock(spec.inter_arrival_us)
    packets = []
    for port in range(spec.port_lo, spec.port_hi + 1):
        ts_sec, ts_usec = clock.next()
        packets.append(
            PacketRecord(
                ts_sec=ts_sec,
                ts_usec=ts_usec,
                src_ip=spec.scanner_ip,
                dst_ip=spec.victim_ip,
                ip_proto=PROTO_TCP,
                src_port=rng.randint(EPHEMERAL_LO, EPHEMERAL_HI),
                dst_port=port,
                tcp_flags=TCP_SYN,
                wire_len=_SYN_WIRE_LEN,
            )
        )
    return packets


def _benign(spec: BenignSpec) -> list[PacketRecord]:
    """Well-formed handshake plus data exchanges between seeded endpoints."""
    rng = random.Random(spec.seed)
    clock = _Clock(spec.inter_arrival_us)

    flows = []
    for i in range(spec.flow_count):
        client = f"10.1.{rng.randint(0, 254)}.{rng.randint(1, 254)}"
        server = f"10.2.{rng.randint(0, 254)}.{rng.randint(1, 254)}"
        cport = rng.randint(EPHEMERAL_LO, EPHEMERAL_HI)
        sport = rng.choice([80, 443, 8080, 22, 53])
        flows.append((client, server, cport, sport))

    def flow_packet(flow, step):
        client, server, cport, sport = flow
        if step == 0:
            direction, flags, length = "up", TCP_SYN, _SYN_WIRE_LEN
        elif step == 1:
            direction, flags, length = "down", TCP_SYN | TCP_ACK, _SYN_WIRE_LEN
        elif step == 2:
            direction, flags, length = "up", TCP_ACK, _SYN_WIRE_LEN
        else:
            direction = "up" if step % 2 == 1 else "down"
            flags, length = TCP_PSH | TCP_ACK, _DATA_WIRE_LEN
        ts_sec, ts_usec = clock.next()
        if direction == "up":
            return PacketRecord(ts_sec, ts_usec, client, server, PROTO_TCP, cport, sport, flags, length)
        return PacketRecord(ts_sec, ts_usec, server, client, PROTO_TCP, sport, cport, flags, length)

    # Round-robin across flows so traffic interleaves like a real link.
    packets = []
    for step in range(spec.packets_per_flow):
        for flow in flows:
            packets.append(flow_packet(flow, step))
    return packets
