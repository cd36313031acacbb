"""Shared program and trace builders for the test suite."""

from __future__ import annotations

from flowsentry.packets.model import PacketRecord
from flowsentry.xfsm.model import (
    METRIC_EXACT,
    Comparison,
    EventDef,
    FeatureDef,
    FeatureRef,
    FlagIs,
    IncrementMetric,
    IntConst,
    MetricDef,
    ProtoIs,
    Publish,
    Transition,
    TrueCond,
    XfsmProgram,
)

BASE_TS = 1_700_000_000


def synflood_program(threshold: int = 5) -> XfsmProgram:
    """Per-source SYN counter that alarms once the threshold is crossed."""
    return XfsmProgram(
        program_id="synflood",
        version=1,
        flow_key_spec=("src_ip",),
        event_defs=(
            EventDef("tcp_syn", (ProtoIs(6), FlagIs("SYN", True), FlagIs("ACK", False))),
        ),
        metric_defs=(MetricDef("syn_count", METRIC_EXACT),),
        feature_defs=(FeatureDef("syns", "syn_count"),),
        states=("SAFE", "ALARM"),
        initial_state="SAFE",
        transitions=(
            Transition(
                "SAFE",
                "tcp_syn",
                Comparison(FeatureRef("syns"), ">=", IntConst(threshold)),
                (Publish("alert", "synflood", "src={flow_key} syns={syns} ts={ts}"),),
                "ALARM",
            ),
            Transition(
                "SAFE", "tcp_syn", TrueCond(), (IncrementMetric("syn_count", 1),), "SAFE"
            ),
        ),
    )


def syn_packet(i: int, src: str = "10.0.0.1", dst: str = "10.0.0.2", dport: int = 80) -> PacketRecord:
    return PacketRecord(
        ts_sec=BASE_TS + (i * 1000) // 1_000_000,
        ts_usec=(i * 1000) % 1_000_000,
        src_ip=src,
        dst_ip=dst,
        ip_proto=6,
        src_port=40000 + i,
        dst_port=dport,
        tcp_flags=0x02,
        wire_len=54,
    )


def syn_trace(count: int, **kwargs) -> list[PacketRecord]:
    return [syn_packet(i, **kwargs) for i in range(count)]


def udp_packet(i: int = 0) -> PacketRecord:
    return PacketRecord(
        ts_sec=BASE_TS,
        ts_usec=i,
        src_ip="10.0.0.9",
        dst_ip="10.0.0.2",
        ip_proto=17,
        src_port=5000,
        dst_port=53,
        tcp_flags=0,
        wire_len=60,
    )
