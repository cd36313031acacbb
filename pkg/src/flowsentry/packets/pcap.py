"""Capture-file reader and writer.

Classic pcap only: microsecond timestamps, Ethernet link type. Files are
written little-endian with magic 0xA1B2C3D4; the reader detects either byte
order from the magic. Non-IPv4 and truncated packets are skipped and counted,
never raised.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterator

from .model import PROTO_TCP, PROTO_UDP, PacketRecord, ip_from_bytes, ip_to_bytes

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
SNAPLEN = 65535

_GLOBAL_HEADER = struct.Struct("<IHHiIII")
_ETH_IPV4 = 0x0800


class UnreadableCaptureError(Exception):
    """Bad magic number or truncated global header."""


class PcapStream:
    """Incremental pcap reader over any binary file object.

    Iterating yields PacketRecords; frames that are not plain IPv4 over
    Ethernet, or that are cut short, increment ``skipped`` instead.
    """

    def __init__(self, fp: BinaryIO) -> None:
        self._fp = fp
        self.skipped = 0
        header = fp.read(24)
        if len(header) < 24:
            raise UnreadableCaptureError("truncated global header")
        magic = struct.unpack("<I", header[:4])[0]
        if magic == PCAP_MAGIC:
            self._endian = "<"
        elif struct.unpack(">I", header[:4])[0] == PCAP_MAGIC:
            self._endian = ">"
        elif magic == PCAP_MAGIC_NS or struct.unpack(">I", header[:4])[0] == PCAP_MAGIC_NS:
            raise UnreadableCaptureError("nanosecond captures not supported")
        else:
            raise UnreadableCaptureError(f"bad magic number 0x{magic:08X}")
        self._rec_header = struct.Struct(self._endian + "IIII")

    def __iter__(self) -> Iterator[PacketRecord]:
        while True:
            raw = self._fp.read(16)
            if not raw:
                return
            if len(raw) < 16:
                self.skipped += 1
                return
            ts_sec, ts_usec, incl_len, orig_len = self._rec_header.unpack(raw)
            data = self._fp.read(incl_len)
            if len(data) < incl_len:
                self.skipped += 1
                return
            record = _parse_frame(ts_sec, ts_usec, orig_len, data)
            if record is None:
                self.skipped += 1
                continue
            yield record


def _parse_frame(ts_sec: int, ts_usec: int, orig_len: int, data: bytes) -> PacketRecord | None:
    if len(data) < 14:
        return None
    ethertype = struct.unpack(">H", data[12:14])[0]
    if ethertype != _ETH_IPV4:
        return None
    ip = data[14:]
    if len(ip) < 20:
        return None
    version_ihl = ip[0]
    if version_ihl >> 4 != 4:
        return None
    ihl = (version_ihl & 0x0F) * 4
    if ihl < 20 or len(ip) < ihl:
        return None
    proto = ip[9]
    src_ip = ip_from_bytes(ip[12:16])
    dst_ip = ip_from_bytes(ip[16:20])
    l4 = ip[ihl:]
    src_port = dst_port = 0
    tcp_flags = 0
    if proto == PROTO_TCP:
        if len(l4) < 14:
            return None
        src_port, dst_port = struct.unpack(">HH", l4[:4])
        tcp_flags = l4[13]
    elif proto == PROTO_UDP:
        if len(l4) < 8:
            return None
        src_port, dst_port = struct.unpack(">HH", l4[:4])
    return PacketRecord(
        ts_sec=ts_sec,
        ts_usec=ts_usec,
        src_ip=src_ip,
        dst_ip=dst_ip,
        ip_proto=proto,
        src_port=src_port,
        dst_port=dst_port,
        tcp_flags=tcp_flags,
        wire_len=orig_len,
    )


def read_pcap(path) -> tuple[list[PacketRecord], int]:
    """Read a capture file; returns (records, skipped_count)."""
    with open(path, "rb") as fp:
        stream = PcapStream(fp)
        records = list(stream)
        return records, stream.skipped


def _ip_checksum(header: bytes) -> int:
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) + header[i + 1]
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_frame(record: PacketRecord) -> bytes:
    """Ethernet frame for a record; payload is zero filled up to wire_len."""
    if record.ip_proto == PROTO_TCP:
        l4_header_len = 20
    elif record.ip_proto == PROTO_UDP:
        l4_header_len = 8
    else:
        l4_header_len = 0
    base = 14 + 20 + l4_header_len
    if record.wire_len < base:
        raise ValueError(f"wire_len {record.wire_len} below header size {base}")
    payload_len = record.wire_len - base

    eth = b"\x00" * 12 + struct.pack(">H", _ETH_IPV4)
    total_len = 20 + l4_header_len + payload_len
    ip = struct.pack(
        ">BBHHHBBH4s4s",
        0x45,
        0,
        total_len,
        0,
        0,
        64,
        record.ip_proto,
        0,
        ip_to_bytes(record.src_ip),
        ip_to_bytes(record.dst_ip),
    )
    ip = ip[:10] + struct.pack(">H", _ip_checksum(ip)) + ip[12:]

    if record.ip_proto == PROTO_TCP:
        l4 = struct.pack(
            ">HHIIBBHHH",
            record.src_port,
            record.dst_port,
            0,
            0,
            5 << 4,
            record.tcp_flags,
            65535,
            0,
            0,
        )
    elif record.ip_proto == PROTO_UDP:
        l4 = struct.pack(">HHHH", record.src_port, record.dst_port, 8 + payload_len, 0)
    else:
        l4 = b""
    return eth + ip + l4 + b"\x00" * payload_len


def write_global_header(fp: BinaryIO) -> None:
    fp.write(_GLOBAL_HEADER.pack(PCAP_MAGIC, 2, 4, 0, 0, SNAPLEN, LINKTYPE_ETHERNET))


def write_record(fp: BinaryIO, record: PacketRecord) -> None:
    frame = build_frame(record)
    fp.write(struct.pack("<IIII", record.ts_sec, record.ts_usec, len(frame), record.wire_len))
    fp.write(frame)


def write_pcap(path, records) -> None:
    with open(path, "wb") as fp:
        write_global_header(fp)
        for record in records:
            write_record(fp, record)
