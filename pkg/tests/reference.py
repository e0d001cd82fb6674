"""Independent oracles used by the test suite.

These are deliberately separate implementations from the package: a
textbook ChaCha20 written from the RFC pseudocode, and a from-scratch
one's-complement TCP checksum over the pseudo header. They verify the
production paths without sharing code with them.
"""
from __future__ import annotations

import socket
import struct


def _rotl(x: int, n: int) -> int:
    x &= 0xFFFFFFFF
    return ((x << n) & 0xFFFFFFFF) | (x >> (32 - n))


def _qr(state, a, b, c, d):
    state[a] = (state[a] + state[b]) & 0xFFFFFFFF
    state[d] = _rotl(state[d] ^ state[a], 16)
    state[c] = (state[c] + state[d]) & 0xFFFFFFFF
    state[b] = _rotl(state[b] ^ state[c], 12)
    state[a] = (state[a] + state[b]) & 0xFFFFFFFF
    state[d] = _rotl(state[d] ^ state[a], 8)
    state[c] = (state[c] + state[d]) & 0xFFFFFFFF
    state[b] = _rotl(state[b] ^ state[c], 7)


def ref_chacha20_block(key: bytes, counter: int, nonce: bytes) -> bytes:
    constants = b"expa" + b"nd 3" + b"2-by" + b"te k"
    init = list(struct.unpack("<4I", constants))
    init += list(struct.unpack("<8I", key))
    init += [counter & 0xFFFFFFFF]
    init += list(struct.unpack("<3I", nonce))
    x = list(init)
    for _ in range(10):
        _qr(x, 0, 4, 8, 12)
        _qr(x, 1, 5, 9, 13)
        _qr(x, 2, 6, 10, 14)
        _qr(x, 3, 7, 11, 15)
        _qr(x, 0, 5, 10, 15)
        _qr(x, 1, 6, 11, 12)
        _qr(x, 2, 7, 8, 13)
        _qr(x, 3, 4, 9, 14)
    return b"".join(struct.pack("<I", (x[i] + init[i]) & 0xFFFFFFFF)
                    for i in range(16))


def ref_keystream(key: bytes, nonce: bytes, offset: int, length: int) -> bytes:
    """Keystream bytes [offset, offset+length), initial block counter 0."""
    out = b""
    counter = 0
    produced = 0
    while produced < offset + length:
        out += ref_chacha20_block(key, counter, nonce)
        counter += 1
        produced += 64
    return out[offset:offset + length]


def ref_tcp_checksum_valid(raw_frame: bytes) -> bool:
    """Full RFC 793/1071 verification over a raw Ethernet/IPv4/TCP frame.

    Sums pseudo header + entire TCP segment including the stored checksum;
    valid iff the folded sum is all ones.
    """
    ihl = (raw_frame[14] & 0x0F) * 4
    total_length = struct.unpack_from(">H", raw_frame, 16)[0]
    l4 = 14 + ihl
    segment = raw_frame[l4:14 + total_length]
    src = raw_frame[26:30]
    dst = raw_frame[30:34]
    pseudo = src + dst + struct.pack(">BBH", 0, 6, len(segment))
    data = pseudo + segment
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return total == 0xFFFF


def ref_build_ipv4_tcp(src_ip: str, dst_ip: str, src_port: int, dst_port: int,
                       seq: int, flags: int, payload: bytes) -> bytes:
    """Independent packet constructor (no reuse of the package's builder)."""
    eth = b"\xaa" * 6 + b"\xbb" * 6 + b"\x08\x00"
    total_length = 40 + len(payload)
    ip = bytearray(20)
    ip[0] = 0x45
    struct.pack_into(">H", ip, 2, total_length)
    ip[8] = 64
    ip[9] = 6
    ip[12:16] = socket.inet_aton(src_ip)
    ip[16:20] = socket.inet_aton(dst_ip)
    csum = 0
    for i in range(0, 20, 2):
        csum += (ip[i] << 8) | ip[i + 1]
    while csum > 0xFFFF:
        csum = (csum & 0xFFFF) + (csum >> 16)
    struct.pack_into(">H", ip, 10, ~csum & 0xFFFF)
    tcp = bytearray(20) + bytearray(payload)
    struct.pack_into(">HH", tcp, 0, src_port, dst_port)
    struct.pack_into(">I", tcp, 4, seq & 0xFFFFFFFF)
    tcp[12] = 5 << 4
    tcp[13] = flags
    struct.pack_into(">H", tcp, 14, 0xFFFF)
    pseudo = socket.inet_aton(src_ip) + socket.inet_aton(dst_ip) + \
        struct.pack(">BBH", 0, 6, len(tcp))
    data = bytes(pseudo) + bytes(tcp)
    if len(data) % 2:
        data += b"\x00"
    csum = 0
    for i in range(0, len(data), 2):
        csum += (data[i] << 8) | data[i + 1]
    while csum > 0xFFFF:
        csum = (csum & 0xFFFF) + (csum >> 16)
    struct.pack_into(">H", tcp, 16, ~csum & 0xFFFF)
    return eth + bytes(ip) + bytes(tcp)
