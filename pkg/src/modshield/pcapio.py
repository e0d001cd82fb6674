"""Classic pcap container (magic 0xA1B2C3D4, Ethernet link type).

Reads both byte orders, writes little-endian. Timestamps are microsecond
pairs and pass through unchanged.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1


class PcapFormat(Exception):
    pass


@dataclass
class PcapPacket:
    ts_sec: int
    ts_usec: int
    data: bytes


def read_pcap(path: str) -> list[PcapPacket]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 24:
        raise PcapFormat("file shorter than a pcap global header")
    magic_le = struct.unpack_from("<I", blob, 0)[0]
    if magic_le == PCAP_MAGIC:
        endian = "<"
    elif struct.unpack_from(">I", blob, 0)[0] == PCAP_MAGIC:
        endian = ">"
    else:
        raise PcapFormat(f"bad magic 0x{magic_le:08X}")
    _, _, _, _, _, linktype = struct.unpack_from(endian + "HHiIII", blob, 4)
    if linktype != LINKTYPE_ETHERNET:
        raise PcapFormat(f"unsupported link type {linktype}")
    packets = []
    pos = 24
    while pos < len(blob):
        if len(blob) - pos < 16:
            raise PcapFormat("truncated packet header")
        ts_sec, ts_usec, caplen, origlen = struct.unpack_from(endian + "IIII", blob, pos)
        pos += 16
        if len(blob) - pos < caplen:
            raise PcapFormat("truncated packet data")
        packets.append(PcapPacket(ts_sec, ts_usec, bytes(blob[pos:pos + caplen])))
        pos += caplen
    return packets


def write_pcap(path: str, packets: list[PcapPacket]) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, 65535,
                            LINKTYPE_ETHERNET))
        for pkt in packets:
            f.write(struct.pack("<IIII", pkt.ts_sec, pkt.ts_usec,
                                len(pkt.data), len(pkt.data)))
            f.write(pkt.data)
