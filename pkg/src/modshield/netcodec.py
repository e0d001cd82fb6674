"""Raw Ethernet/IPv4/TCP frame views with in-place payload rewriting.

The datapath never grows or shrinks a packet, so checksum repair is done
incrementally (RFC 1624 style) over the rewritten region only. A full
pseudo-header recomputation exists in the test suite as the oracle.

IPv4 and TCP options are tolerated (offsets honor IHL / data offset) but
never modified. Buffers are assumed to carry no Ethernet FCS, matching
pcap conventions.
"""
from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

ETH_HLEN = 14
ETHERTYPE_IPV4 = 0x0800
IPPROTO_TCP = 6

TCP_FLAG_FIN = 0x01
TCP_FLAG_SYN = 0x02
TCP_FLAG_RST = 0x04
TCP_FLAG_PSH = 0x08
TCP_FLAG_ACK = 0x10


class NetcodecError(Exception):
    pass


class Truncated(NetcodecError):
    """Declared header/total lengths exceed the buffer."""


class RegionOutOfBounds(NetcodecError):
    """Checksum-fix region does not lie inside the TCP payload."""


@dataclass(frozen=True)
class FlowKey:
    """Canonicalized 4-tuple; `swapped` records whether src/dst were flipped."""
    ip_a: str
    ip_b: str
    port_a: int
    port_b: int
    swapped: bool

    @classmethod
    def from_endpoints(cls, src_ip: str, dst_ip: str,
                       src_port: int, dst_port: int) -> "FlowKey":
        a = (ip_to_int(src_ip), src_port)
        b = (ip_to_int(dst_ip), dst_port)
        if a <= b:
            return cls(src_ip, dst_ip, src_port, dst_port, False)
        return cls(dst_ip, src_ip, dst_port, src_port, True)


def ip_to_int(ip: str) -> int:
    return struct.unpack(">I", socket.inet_aton(ip))[0]


def int_to_ip(v: int) -> str:
    return socket.inet_ntoa(struct.pack(">I", v))


class PacketView:
    """Mutable structured view over one Ethernet/IPv4/TCP frame.

    Grants exclusive access to its buffer; independent views may be used
    concurrently.
    """

    def __init__(self, raw: bytes | bytearray):
        self.raw = bytearray(raw)
        self.l2_offset = 0
        if len(self.raw) < ETH_HLEN + 20 + 20:
            raise Truncated(f"frame of {len(self.raw)} bytes too short for IPv4/TCP")
        self.l3_offset = ETH_HLEN
        ihl = (self.raw[self.l3_offset] & 0x0F) * 4
        if ihl < 20:
            raise Truncated(f"IPv4 IHL {ihl} invalid")
        total_length = struct.unpack_from(">H", self.raw, self.l3_offset + 2)[0]
        if self.l3_offset + total_length > len(self.raw):
            raise Truncated(
                f"IPv4 total length {total_length} exceeds buffer of {len(self.raw)}")
        self.l4_offset = self.l3_offset + ihl
        data_offset = (self.raw[self.l4_offset + 12] >> 4) * 4
        if data_offset < 20 or self.l4_offset + data_offset > self.l3_offset + total_length:
            raise Truncated(f"TCP data offset {data_offset} invalid")
        self.payload_offset = self.l4_offset + data_offset
        self._ip_total_length = total_length

    # -- decoded fields ---------------------------------------------------

    @property
    def src_ip(self) -> str:
        return int_to_ip(struct.unpack_from(">I", self.raw, self.l3_offset + 12)[0])

    @property
    def dst_ip(self) -> str:
        return int_to_ip(struct.unpack_from(">I", self.raw, self.l3_offset + 16)[0])

    @property
    def src_port(self) -> int:
        return struct.unpack_from(">H", self.raw, self.l4_offset)[0]

    @property
    def dst_port(self) -> int:
        return struct.unpack_from(">H", self.raw, self.l4_offset + 2)[0]

    @property
    def seq(self) -> int:
        return struct.unpack_from(">I", self.raw, self.l4_offset + 4)[0]

    @property
    def flags(self) -> int:
        return self.raw[self.l4_offset + 13]

    @property
    def payload_len(self) -> int:
        return self.l3_offset + self._ip_total_length - self.payload_offset

    @property
    def payload(self) -> bytes:
        return bytes(self.raw[self.payload_offset:self.payload_offset + self.payload_len])

    @property
    def tcp_checksum(self) -> int:
        return struct.unpack_from(">H", self.raw, self.l4_offset + 16)[0]

    def flow_key(self) -> FlowKey:
        return FlowKey.from_endpoints(self.src_ip, self.dst_ip,
                                      self.src_port, self.dst_port)

    def write_payload(self, region_offset: int, new_bytes: bytes) -> None:
        """Overwrite payload bytes and repair the TCP checksum incrementally.

        `region_offset` is relative to the start of the TCP payload; the
        replacement has the same length as the bytes it overwrites.
        """
        start = self.payload_offset + region_offset
        end = start + len(new_bytes)
        if region_offset < 0 or end > self.payload_offset + self.payload_len:
            raise RegionOutOfBounds(
                f"region [{region_offset}, {region_offset + len(new_bytes)}) "
                f"outside payload of {self.payload_len} bytes")
        old = bytes(self.raw[start:end])
        self.raw[start:end] = new_bytes
        fix = incremental_checksum_fix(self.tcp_checksum,
                                       start - self.l4_offset, old, new_bytes)
        struct.pack_into(">H", self.raw, self.l4_offset + 16, fix)


def decode_packet(raw: bytes | bytearray) -> PacketView | None:
    """Build a view over `raw`; None for non-IPv4/TCP frames (pass-through).

    Raises Truncated when the frame claims to be IPv4/TCP but its declared
    lengths do not fit the buffer.
    """
    if len(raw) < ETH_HLEN:
        return None
    ethertype = struct.unpack_from(">H", raw, 12)[0]
    if ethertype != ETHERTYPE_IPV4:
        return None
    if len(raw) < ETH_HLEN + 20:
        raise Truncated("IPv4 frame shorter than minimal header")
    version = raw[ETH_HLEN] >> 4
    if version != 4:
        return None
    if raw[ETH_HLEN + 9] != IPPROTO_TCP:
        return None
    return PacketView(raw)


def encode_packet(view: PacketView) -> bytes:
    """Emit the (possibly mutated) raw bytes; inverse of decode_packet."""
    return bytes(view.raw)


def _sum_words(data: bytes, parity: int) -> int:
    """One's-complement sum of `data` packed into words at bit parity.

    `parity` is the byte position of data[0] within the checksummed stream
    modulo 2; even positions are word high bytes.
    """
    total = 0
    for i, b in enumerate(data):
        if (parity + i) % 2 == 0:
            total += b << 8
        else:
            total += b
    return total


def _fold(v: int) -> int:
    while v > 0xFFFF:
        v = (v & 0xFFFF) + (v >> 16)
    return v


def incremental_checksum_fix(old_checksum: int, region_offset: int,
                             old_bytes: bytes, new_bytes: bytes) -> int:
    """RFC 1624-style checksum update after an equal-length rewrite.

    `region_offset` is relative to the start of the checksummed data (the
    TCP header), so word-alignment parity is preserved.
    """
    if len(old_bytes) != len(new_bytes):
        raise ValueError("rewrite must be length-preserving")
    parity = region_offset % 2
    # HC' = ~(~HC + ~m + m'), applied to the whole region as one sum.
    sum_old = _fold(_sum_words(old_bytes, parity))
    sum_new = _fold(_sum_words(new_bytes, parity))
    acc = (~old_checksum & 0xFFFF) + (~sum_old & 0xFFFF) + sum_new
    return (~_fold(acc)) & 0xFFFF


def tcp_checksum(src_ip: str, dst_ip: str, tcp_segment: bytes) -> int:
    """Full pseudo-header TCP checksum, for packet synthesis.

    The checksum field inside `tcp_segment` must be zeroed by the caller.
    """
    pseudo = socket.inet_aton(src_ip) + socket.inet_aton(dst_ip) + \
        struct.pack(">BBH", 0, IPPROTO_TCP, len(tcp_segment))
    data = pseudo + tcp_segment
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
    return (~_fold(total)) & 0xFFFF


def ipv4_checksum(header: bytes) -> int:
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) | header[i + 1]
    return (~_fold(total)) & 0xFFFF


def build_tcp_frame(src_mac: bytes, dst_mac: bytes, src_ip: str, dst_ip: str,
                    src_port: int, dst_port: int, seq: int, ack: int,
                    flags: int, payload: bytes, ip_id: int = 0) -> bytes:
    """Synthesize a well-formed Ethernet/IPv4/TCP frame with valid checksums."""
    eth = dst_mac + src_mac + struct.pack(">H", ETHERTYPE_IPV4)
    total_length = 20 + 20 + len(payload)
    ip = bytearray(struct.pack(">BBHHHBBH4s4s",
                               0x45, 0, total_length, ip_id, 0, 64, IPPROTO_TCP, 0,
                               socket.inet_aton(src_ip), socket.inet_aton(dst_ip)))
    struct.pack_into(">H", ip, 10, ipv4_checksum(bytes(ip)))
    tcp = bytearray(struct.pack(">HHIIBBHHH",
                                src_port, dst_port, seq & 0xFFFFFFFF,
                                ack & 0xFFFFFFFF, 5 << 4, flags, 0xFFFF, 0, 0))
    tcp += payload
    struct.pack_into(">H", tcp, 16, tcp_checksum(src_ip, dst_ip, bytes(tcp)))
    return eth + bytes(ip) + bytes(tcp)
