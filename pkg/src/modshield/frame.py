"""Modbus TCP framing: MBAP headers, PDUs, ADUs and the function-code table.

Everything here is stateless and operates on plain bytes. Reassembly of
ADUs split across TCP segments is the datapath's job; `split_adus` only
reports how many trailing bytes did not form a complete ADU.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

MBAP_SIZE = 7
# MBAP length counts unit_id + PDU; PDU data is capped at 252 bytes so the
# datapath can rely on a static per-ADU buffer bound.
MIN_MBAP_LENGTH = 2
MAX_MBAP_LENGTH = 254
MAX_PDU_DATA = 252

PROTOCOL_ID_MODBUS = 0x0000


class FrameError(Exception):
    """Base class for framing errors."""


class TruncatedHeader(FrameError):
    """Fewer than 7 bytes available where an MBAP header was expected."""


class MalformedLength(FrameError):
    """MBAP length field outside [2, 254]."""


class BudgetExceeded(FrameError):
    """More complete ADUs in a payload than the caller's budget allows."""


class InvariantViolation(FrameError):
    """An ADU's header length disagrees with its PDU size."""


@dataclass
class MbapHeader:
    transaction_id: int  # u16, big-endian on the wire
    protocol_id: int     # u16; 0x0000 = plaintext Modbus
    length: int          # u16; counts unit_id + PDU bytes
    unit_id: int         # u8

    def to_bytes(self) -> bytes:
        return struct.pack(">HHHB", self.transaction_id, self.protocol_id,
                           self.length, self.unit_id)


@dataclass
class Pdu:
    function_code: int
    data: bytes = b""


@dataclass
class Adu:
    header: MbapHeader
    pdu: Pdu

    def total_len(self) -> int:
        return MBAP_SIZE + 1 + len(self.pdu.data)


class FcCategory(Enum):
    PUBLIC = "Public"
    USER_DEFINED = "UserDefined"
    EXCEPTION_RESPONSE = "ExceptionResponse"
    INVALID = "Invalid"


@dataclass(frozen=True)
class FunctionCodeClass:
    category: FcCategory
    original_code: int | None = None  # set only for exception responses

    def __str__(self) -> str:
        if self.category is FcCategory.EXCEPTION_RESPONSE:
            return f"ExceptionResponse(orig={self.original_code})"
        return self.category.value


def parse_mbap(data: bytes, offset: int = 0) -> MbapHeader:
    """Decode a 7-byte MBAP header at `offset`.

    Does not validate the length field; that is `validate_adu`'s job.
    """
    if len(data) - offset < MBAP_SIZE:
        raise TruncatedHeader(
            f"need {MBAP_SIZE} bytes at offset {offset}, have {len(data) - offset}")
    tid, pid, length, unit = struct.unpack_from(">HHHB", data, offset)
    return MbapHeader(tid, pid, length, unit)


def validate_adu(adu: Adu) -> None:
    """Raise InvariantViolation / MalformedLength if the ADU is inconsistent."""
    length = adu.header.length
    if not MIN_MBAP_LENGTH <= length <= MAX_MBAP_LENGTH:
        raise MalformedLength(f"MBAP length {length} outside [2, 254]")
    if length != 2 + len(adu.pdu.data):
        raise InvariantViolation(
            f"MBAP length {length} but PDU implies {2 + len(adu.pdu.data)}")
    if not 0 <= adu.pdu.function_code <= 255:
        raise InvariantViolation(f"function code {adu.pdu.function_code} not a byte")


def serialize_adu(adu: Adu) -> bytes:
    """Serialize header + PDU; inverse of parse on valid input."""
    validate_adu(adu)
    return adu.header.to_bytes() + bytes([adu.pdu.function_code]) + bytes(adu.pdu.data)


def parse_adu(data: bytes, offset: int = 0) -> Adu:
    """Parse one complete ADU at `offset`; raises if truncated or malformed."""
    header = parse_mbap(data, offset)
    if not MIN_MBAP_LENGTH <= header.length <= MAX_MBAP_LENGTH:
        raise MalformedLength(f"MBAP length {header.length} outside [2, 254]")
    end = offset + MBAP_SIZE + header.length - 1
    if end > len(data):
        raise TruncatedHeader(f"ADU claims {header.length} bytes, buffer short")
    fc = data[offset + MBAP_SIZE]
    body = bytes(data[offset + MBAP_SIZE + 1:end])
    return Adu(header, Pdu(fc, body))


def split_adus(tcp_payload: bytes, max_adus: int) -> tuple[list[Adu], int]:
    """Split a TCP payload into complete ADUs plus a trailing-partial byte count.

    Consumes ADUs sequentially using each MBAP length. Returns the complete
    ADUs and how many trailing bytes belong to an incomplete ADU (0 when the
    payload ends on an ADU boundary). The loop is bounded by `max_adus`.
    """
    if max_adus < 1:
        raise ValueError("max_adus must be >= 1")
    adus: list[Adu] = []
    pos = 0
    n = len(tcp_payload)
    while pos < n:
        if n - pos < MBAP_SIZE:
            return adus, n - pos
        header = parse_mbap(tcp_payload, pos)
        if not MIN_MBAP_LENGTH <= header.length <= MAX_MBAP_LENGTH:
            raise MalformedLength(
                f"MBAP length {header.length} outside [2, 254] at offset {pos}")
        total = MBAP_SIZE + header.length - 1
        if n - pos < total:
            return adus, n - pos
        if len(adus) >= max_adus:
            raise BudgetExceeded(f"more than {max_adus} ADUs in one segment")
        adus.append(parse_adu(tcp_payload, pos))
        pos += total
    return adus, 0


def classify_function_code(code: int) -> FunctionCodeClass:
    """Classify a function-code byte. Total over 0..=255."""
    if code == 0:
        return FunctionCodeClass(FcCategory.INVALID)
    if 128 <= code <= 255:
        return FunctionCodeClass(FcCategory.EXCEPTION_RESPONSE, code - 128)
    if 65 <= code <= 72 or 100 <= code <= 110:
        return FunctionCodeClass(FcCategory.USER_DEFINED)
    return FunctionCodeClass(FcCategory.PUBLIC)
