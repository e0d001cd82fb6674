"""Length-preserving PDU encryption: ChaCha20 keystream XOR.

Confidentiality only, no MAC: an authentication tag would change payload
length and force TCP sequence rewriting on both directions, which is
exactly what the transparent datapath must avoid. Encrypt and decrypt are
the same operation (XOR involution).

ChaCha20 follows RFC 8439 (96-bit nonce, 32-bit block counter starting
at 0). All loops are statically bounded, so the same structure translates
to a verifier-constrained kernel datapath.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

KEY_SIZE = 32
NONCE_SIZE = 12
BLOCK_SIZE = 64

_SIGMA = (0x61707865, 0x3320646E, 0x79622D32, 0x6B206574)

DIR_TO_SERVER = 0x00    # initiator -> responder
DIR_TO_CLIENT = 0x01    # responder -> initiator


@dataclass(frozen=True)
class FlowCryptoKey:
    key: bytes
    insecure_test_key: bool = False

    def __post_init__(self):
        if len(self.key) != KEY_SIZE:
            raise ValueError(f"key must be {KEY_SIZE} bytes, got {len(self.key)}")
        if self.key == bytes(KEY_SIZE) and not self.insecure_test_key:
            raise ValueError("all-zero key only allowed with insecure_test_key")


@dataclass(frozen=True)
class NonceInput:
    direction: int       # DIR_TO_SERVER or DIR_TO_CLIENT
    transaction_id: int  # u16
    adu_start_seq: int   # absolute TCP sequence of the ADU's first byte


def build_nonce(n: NonceInput) -> bytes:
    """12-byte nonce: dir(1) | zeros(3) | tid be16 | adu_start_seq be32 | zeros(2).

    Injective over (direction, transaction_id, adu_start_seq) because the
    fields occupy disjoint byte positions.
    """
    return struct.pack(">B3xHI2x", n.direction & 0xFF,
                       n.transaction_id & 0xFFFF, n.adu_start_seq & 0xFFFFFFFF)


def _rotl32(v: int, n: int) -> int:
    return ((v << n) | (v >> (32 - n))) & 0xFFFFFFFF


def _quarter_round(s: list[int], a: int, b: int, c: int, d: int) -> None:
    s[a] = (s[a] + s[b]) & 0xFFFFFFFF
    s[d] = _rotl32(s[d] ^ s[a], 16)
    s[c] = (s[c] + s[d]) & 0xFFFFFFFF
    s[b] = _rotl32(s[b] ^ s[c], 12)
    s[a] = (s[a] + s[b]) & 0xFFFFFFFF
    s[d] = _rotl32(s[d] ^ s[a], 8)
    s[c] = (s[c] + s[d]) & 0xFFFFFFFF
    s[b] = _rotl32(s[b] ^ s[c], 7)


def chacha20_block(key: bytes, counter: int, nonce: bytes) -> bytes:
    """One 64-byte ChaCha20 block for (key, counter, nonce)."""
    state = list(_SIGMA)
    state += list(struct.unpack("<8I", key))
    state.append(counter & 0xFFFFFFFF)
    state += list(struct.unpack("<3I", nonce))
    working = state.copy()
    for _ in range(10):
        _quarter_round(working, 0, 4, 8, 12)
        _quarter_round(working, 1, 5, 9, 13)
        _quarter_round(working, 2, 6, 10, 14)
        _quarter_round(working, 3, 7, 11, 15)
        _quarter_round(working, 0, 5, 10, 15)
        _quarter_round(working, 1, 6, 11, 12)
        _quarter_round(working, 2, 7, 8, 13)
        _quarter_round(working, 3, 4, 9, 14)
    out = [(working[i] + state[i]) & 0xFFFFFFFF for i in range(16)]
    return struct.pack("<16I", *out)


def keystream(key: FlowCryptoKey, nonce: bytes, offset: int, length: int) -> bytes:
    """Bytes [offset, offset+length) of the keystream for (key, nonce).

    Deterministic and splitting-consistent: keystream(o, a+b) ==
    keystream(o, a) + keystream(o+a, b).
    """
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    if offset < 0 or length < 0 or offset + length > 2 ** 32:
        raise ValueError("keystream range out of bounds")
    out = bytearray()
    block_index = offset // BLOCK_SIZE
    skip = offset % BLOCK_SIZE
    while len(out) < length:
        block = chacha20_block(key.key, block_index, nonce)
        out += block[skip:skip + (length - len(out))]
        skip = 0
        block_index += 1
    return bytes(out)


def transform_pdu(key: FlowCryptoKey, nonce: bytes, pdu_bytes: bytes,
                  offset_in_adu: int = 0) -> bytes:
    """XOR `pdu_bytes` with the keystream starting at `offset_in_adu`.

    `offset_in_adu` is the PDU-relative position of pdu_bytes[0]; it is
    nonzero when a split ADU resumes mid-stream. Self-inverse.
    """
    ks = keystream(key, nonce, offset_in_adu, len(pdu_bytes))
    return bytes(a ^ b for a, b in zip(pdu_bytes, ks))
