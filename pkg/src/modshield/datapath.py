"""The hookpoint engine: per-frame classify / transform / verdict.

One engine instance attaches to one direction (egress encrypts Modbus
PDUs, ingress decrypts them). The engine mirrors what a kernel hook can
afford: strictly bounded loops, no buffering of out-of-order data (drops
force TCP retransmission), in-place rewrites with incremental checksum
repair, and verdicts instead of exceptions.

Frames are processed transactionally: a frame is scanned first and only
mutated once the whole segment is known to be well-formed, so Drop and
Abort verdicts always return the frame unmodified.

The encrypted-frame marker is an MBAP protocol_id rewrite (0x0000 ->
magic, default 0x0E0B): a fixed-position cleartext field whose rewrite
preserves length, and plaintext Modbus requires it to be zero, so the
marker is unambiguous.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import cipher, frame, netcodec
from .statestore import FlowState, FlowTable, Keystore, PendingAdu, Policy

SEQ_MOD = 1 << 32

DEFAULT_MAGIC = 0x0E0B
DEFAULT_MODBUS_PORT = 502
MAX_FRAME_BYTES = 1514

# TC action codes
TC_ACT_UNSPEC = -1
TC_ACT_OK = 0
TC_ACT_RECLASSIFY = 1
TC_ACT_SHOT = 2
TC_ACT_PIPE = 3


class Direction(Enum):
    EGRESS = "egress"
    INGRESS = "ingress"


class Verdict(Enum):
    PASS = "pass"
    DROP = "drop"
    ABORT = "abort"
    TX = "tx"
    REDIRECT = "redirect"

    def tc_code(self) -> int:
        # Abort also maps to SHOT; the engine keeps the error counter.
        if self is Verdict.PASS:
            return TC_ACT_OK
        if self in (Verdict.DROP, Verdict.ABORT):
            return TC_ACT_SHOT
        return TC_ACT_OK


class FilterKind(Enum):
    MISMATCH = "mismatch"          # classic filter: 0, next filter checks
    DEFAULT_CLASS = "default"      # classic filter: -1, default class
    CLASS_ID = "classid"           # classic filter: explicit classid
    DIRECT_ACTION = "direct"       # da mode: value is a TC action code


@dataclass(frozen=True)
class FilterVerdict:
    kind: FilterKind
    value: int

    @classmethod
    def mismatch(cls) -> "FilterVerdict":
        return cls(FilterKind.MISMATCH, 0)

    @classmethod
    def default_class(cls) -> "FilterVerdict":
        return cls(FilterKind.DEFAULT_CLASS, -1)

    @classmethod
    def direct(cls, tc_code: int) -> "FilterVerdict":
        return cls(FilterKind.DIRECT_ACTION, tc_code)


@dataclass
class EngineConfig:
    direction: Direction
    magic_protocol_id: int = DEFAULT_MAGIC
    modbus_port: int = DEFAULT_MODBUS_PORT
    max_adus_per_segment: int = 8
    policy_default: Policy = Policy.PERMISSIVE
    direct_action: bool = True

    def __post_init__(self):
        if self.magic_protocol_id == 0x0000:
            raise ValueError("magic protocol id must differ from plaintext 0x0000")
        if self.max_adus_per_segment < 1:
            raise ValueError("max_adus_per_segment must be >= 1")


@dataclass
class EngineCounters:
    """Per-engine outcome accounting.

    frames_modbus counts Modbus-port frames that left with a Pass verdict;
    dropped or aborted Modbus frames are attributed to their own counters,
    so frames_total == frames_modbus + passthrough_non_modbus +
    drops_out_of_order + drops_policy + drops_header_split + aborts_malformed.
    """
    frames_total: int = 0
    frames_modbus: int = 0
    adus_encrypted: int = 0
    adus_decrypted: int = 0
    drops_out_of_order: int = 0
    drops_policy: int = 0
    drops_header_split: int = 0
    aborts_malformed: int = 0
    passthrough_non_modbus: int = 0
    tc_error_count: int = 0

    def outcome_sum(self) -> int:
        return (self.frames_modbus + self.passthrough_non_modbus +
                self.drops_out_of_order + self.drops_policy +
                self.drops_header_split + self.aborts_malformed)


def seq_add(a: int, b: int) -> int:
    return (a + b) % SEQ_MOD


def seq_lt(a: int, b: int) -> bool:
    """a < b in 32-bit sequence space (window of 2^31)."""
    diff = (b - a) % SEQ_MOD
    return 0 < diff < SEQ_MOD // 2


def seq_leq(a: int, b: int) -> bool:
    return a == b or seq_lt(a, b)


@dataclass
class _Edit:
    payload_offset: int
    new_bytes: bytes


class _FrameReject(Exception):
    def __init__(self, verdict: Verdict, counter: str):
        self.verdict = verdict
        self.counter = counter


class Engine:
    """One attachment point; processes frames strictly sequentially."""

    def __init__(self, config: EngineConfig, keystore: Keystore,
                 flow_table: FlowTable | None = None):
        self.config = config
        self.keystore = keystore
        self.flows = flow_table if flow_table is not None else FlowTable()
        self.counters = EngineCounters()
        self.clock = 0

    # -- public API -------------------------------------------------------

    def process(self, raw_frame: bytes) -> tuple[Verdict, bytes]:
        """Run one frame through the datapath; never raises."""
        self.counters.frames_total += 1
        self.clock += 1
        try:
            verdict, out = self._process_inner(bytes(raw_frame))
        except _FrameReject as rej:
            setattr(self.counters, rej.counter,
                    getattr(self.counters, rej.counter) + 1)
            if rej.verdict is Verdict.ABORT:
                self.counters.tc_error_count += 1
            return rej.verdict, bytes(raw_frame)
        except Exception:
            # Defensive: a parse hole must surface as Abort, not an exception.
            self.counters.aborts_malformed += 1
            self.counters.tc_error_count += 1
            return Verdict.ABORT, bytes(raw_frame)
        return verdict, out

    def filter_classify(self, raw_frame: bytes) -> tuple[FilterVerdict, bytes]:
        """TC filter entry point.

        In direct-action mode the filter both classifies and acts: it wraps
        process() and returns the TC action code. Without direct-action it
        can only classify (no mutation), which is why a separate action
        object would otherwise be needed.
        """
        if self.config.direct_action:
            verdict, out = self.process(raw_frame)
            return FilterVerdict.direct(verdict.tc_code()), out
        if self._is_modbus_candidate(raw_frame):
            return FilterVerdict.default_class(), bytes(raw_frame)
        return FilterVerdict.mismatch(), bytes(raw_frame)

    def sweep_flows(self) -> int:
        return self.flows.sweep(self.clock)

    # -- internals --------------------------------------------------------

    def _is_modbus_candidate(self, raw_frame: bytes) -> bool:
        try:
            view = netcodec.decode_packet(raw_frame)
        except netcodec.Truncated:
            return False
        if view is None:
            return False
        port = self.config.modbus_port
        return view.src_port == port or view.dst_port == port

    def _process_inner(self, raw: bytes) -> tuple[Verdict, bytes]:
        cfg = self.config
        try:
            view = netcodec.decode_packet(raw)
        except netcodec.Truncated:
            raise _FrameReject(Verdict.ABORT, "aborts_malformed")
        if view is None or (view.src_port != cfg.modbus_port
                            and view.dst_port != cfg.modbus_port):
            self.counters.passthrough_non_modbus += 1
            return Verdict.PASS, raw

        record = self.keystore.lookup(view.src_ip, view.dst_ip, cfg.modbus_port)
        policy = record.policy if record is not None else cfg.policy_default
        if record is None:
            if policy is Policy.STRICT:
                raise _FrameReject(Verdict.DROP, "drops_policy")
            self.counters.frames_modbus += 1
            return Verdict.PASS, raw

        fkey = (view.src_ip, view.src_port, view.dst_ip, view.dst_port)
        flags = view.flags
        if flags & (netcodec.TCP_FLAG_SYN | netcodec.TCP_FLAG_FIN
                    | netcodec.TCP_FLAG_RST) or view.payload_len == 0:
            self._handle_control(fkey, view, flags)
            self.counters.frames_modbus += 1
            return Verdict.PASS, raw

        state = self.flows.get_or_create(fkey, self.clock)
        seq = view.seq
        plen = view.payload_len
        if state.established and seq != state.next_seq:
            if seq_lt(state.next_seq, seq):
                raise _FrameReject(Verdict.DROP, "drops_out_of_order")
            if seq_leq(seq_add(seq, plen), state.next_seq):
                return self._process_retransmit(view, state, record, seq)
            # partial overlap with new data: cannot resume cleanly
            raise _FrameReject(Verdict.DROP, "drops_out_of_order")

        return self._process_in_order(view, state, record, seq)

    def _handle_control(self, fkey: tuple, view: netcodec.PacketView,
                        flags: int) -> None:
        if flags & netcodec.TCP_FLAG_SYN:
            state = self.flows.get_or_create(fkey, self.clock)
            state.next_seq = seq_add(view.seq, 1)
            state.established = True
            state.pending = None
            state.history = []
        elif flags & (netcodec.TCP_FLAG_FIN | netcodec.TCP_FLAG_RST):
            self.flows.delete(fkey)

    def _nonce_direction(self, view: netcodec.PacketView) -> int:
        if view.dst_port == self.config.modbus_port:
            return cipher.DIR_TO_SERVER
        return cipher.DIR_TO_CLIENT

    def _transform_wanted(self, protocol_id: int) -> bool:
        """Does this ADU carry the marker the configured direction rewrites?"""
        if self.config.direction is Direction.EGRESS:
            return protocol_id == frame.PROTOCOL_ID_MODBUS
        return protocol_id == self.config.magic_protocol_id

    def _new_protocol_id(self) -> int:
        if self.config.direction is Direction.EGRESS:
            return self.config.magic_protocol_id
        return frame.PROTOCOL_ID_MODBUS

    def _count_transform(self, n: int = 1) -> None:
        if self.config.direction is Direction.EGRESS:
            self.counters.adus_encrypted += n
        else:
            self.counters.adus_decrypted += n

    def _scan_adu(self, payload: bytes, pos: int, seq: int, direction_byte: int,
                  key: cipher.FlowCryptoKey, policy: Policy,
                  edits: list[_Edit]) -> tuple[int, PendingAdu | None,
                                               tuple[int, int] | None, bool]:
        """Scan one ADU (complete or trailing-partial) starting at `pos`.

        Returns (next position, new pending record, history entry,
        transformed flag). Raises _FrameReject for malformed or policy
        failures; appends edits without touching the packet.
        """
        cfg = self.config
        header = frame.parse_mbap(payload, pos)
        if not frame.MIN_MBAP_LENGTH <= header.length <= frame.MAX_MBAP_LENGTH:
            raise _FrameReject(Verdict.ABORT, "aborts_malformed")
        total = frame.MBAP_SIZE - 1 + header.length
        avail = len(payload) - pos
        adu_seq = seq_add(seq, pos)

        wanted = self._transform_wanted(header.protocol_id)
        plaintext_on_strict_ingress = (
            cfg.direction is Direction.INGRESS and policy is Policy.STRICT
            and header.protocol_id == frame.PROTOCOL_ID_MODBUS)
        if plaintext_on_strict_ingress:
            # Unkeyed/unencrypted Modbus refused before any mutation.
            raise _FrameReject(Verdict.DROP, "drops_policy")
        if not wanted:
            # Wrong or already-rewritten marker for this direction: leave as is.
            return pos + min(total, avail), None, None, False

        nonce = cipher.build_nonce(cipher.NonceInput(
            direction_byte, header.transaction_id, adu_seq))
        pid_bytes = self._new_protocol_id().to_bytes(2, "big")
        pdu_start = pos + frame.MBAP_SIZE
        if avail >= total:
            edits.append(_Edit(pos + 2, pid_bytes))
            ct = cipher.transform_pdu(key, nonce, payload[pdu_start:pos + total], 0)
            edits.append(_Edit(pdu_start, ct))
            return pos + total, None, (adu_seq, header.transaction_id), True
        # Trailing partial with a complete header: transform what is here,
        # remember how to resume.
        edits.append(_Edit(pos + 2, pid_bytes))
        done_pdu = avail - frame.MBAP_SIZE
        if done_pdu > 0:
            ct = cipher.transform_pdu(key, nonce, payload[pdu_start:], 0)
            edits.append(_Edit(pdu_start, ct))
        pending = PendingAdu(remaining=total - avail, nonce=nonce,
                             offset_in_adu=done_pdu)
        return len(payload), pending, (adu_seq, header.transaction_id), True

    def _process_in_order(self, view: netcodec.PacketView, state: FlowState,
                          record, seq: int) -> tuple[Verdict, bytes]:
        cfg = self.config
        payload = view.payload
        plen = len(payload)
        direction_byte = self._nonce_direction(view)
        key = record.key
        policy = record.policy

        edits: list[_Edit] = []
        history_new: list[tuple[int, int]] = []
        transformed = 0
        pos = 0
        new_pending: PendingAdu | None = None

        pending = state.pending
        if pending is not None:
            take = min(pending.remaining, plen)
            ct = cipher.transform_pdu(key, pending.nonce, payload[:take],
                                      pending.offset_in_adu)
            edits.append(_Edit(0, ct))
            if take < pending.remaining:
                new_pending = PendingAdu(pending.remaining - take, pending.nonce,
                                         pending.offset_in_adu + take)
            pos = take

        adus_seen = 0
        while pos < plen and new_pending is None:
            if plen - pos < frame.MBAP_SIZE:
                # Header split across segments is not buffered in v1.
                raise _FrameReject(Verdict.DROP, "drops_header_split")
            if adus_seen >= cfg.max_adus_per_segment:
                raise _FrameReject(Verdict.ABORT, "aborts_malformed")
            pos, pend, hist, did = self._scan_adu(
                payload, pos, seq, direction_byte, key, policy, edits)
            adus_seen += 1
            if pend is not None:
                new_pending = pend
            if hist is not None:
                history_new.append(hist)
            if did:
                transformed += 1

        # Commit: mutate the packet region by region, then advance state.
        for edit in edits:
            view.write_payload(edit.payload_offset, edit.new_bytes)
        state.next_seq = seq_add(seq, plen)
        state.established = True
        state.pending = new_pending
        for adu_seq, tid in history_new:
            state.remember_adu(adu_seq, tid)
        self._count_transform(transformed)
        self.counters.frames_modbus += 1
        return Verdict.PASS, netcodec.encode_packet(view)

    def _process_retransmit(self, view: netcodec.PacketView, state: FlowState,
                            record, seq: int) -> tuple[Verdict, bytes]:
        """History-aligned retransmits re-transform deterministically.

        The nonce binds (direction, transaction_id, adu_start_seq), all of
        which a faithful retransmission repeats, so the ciphertext is
        byte-identical to the first pass. Anything not aligned to a known
        ADU start is dropped and left to the endpoint to retry in order.
        """
        if not state.history_has_start(seq):
            raise _FrameReject(Verdict.DROP, "drops_out_of_order")
        payload = view.payload
        try:
            adus, trailing = frame.split_adus(payload, self.config.max_adus_per_segment)
        except frame.MalformedLength:
            raise _FrameReject(Verdict.ABORT, "aborts_malformed")
        except frame.BudgetExceeded:
            raise _FrameReject(Verdict.ABORT, "aborts_malformed")
        if trailing != 0:
            raise _FrameReject(Verdict.DROP, "drops_out_of_order")

        direction_byte = self._nonce_direction(view)
        edits: list[_Edit] = []
        transformed = 0
        pos = 0
        for adu in adus:
            total = adu.total_len()
            if self._transform_wanted(adu.header.protocol_id):
                adu_seq = seq_add(seq, pos)
                nonce = cipher.build_nonce(cipher.NonceInput(
                    direction_byte, adu.header.transaction_id, adu_seq))
                edits.append(_Edit(pos + 2, self._new_protocol_id().to_bytes(2, "big")))
                ct = cipher.transform_pdu(
                    record.key, nonce,
                    payload[pos + frame.MBAP_SIZE:pos + total], 0)
                edits.append(_Edit(pos + frame.MBAP_SIZE, ct))
                transformed += 1
            pos += total
        for edit in edits:
            view.write_payload(edit.payload_offset, edit.new_bytes)
        self._count_transform(transformed)
        self.counters.frames_modbus += 1
        return Verdict.PASS, netcodec.encode_packet(view)


# -- verifier-style self check -------------------------------------------

#: Loop bounds the datapath relies on, and the budget each must stay within.
LOOP_BUDGETS = {
    "adus_per_segment": 64,
    "pdu_bytes": frame.MAX_PDU_DATA + 1,
    "history_ring": 64,
    "cipher_rounds": 20,
}

#: Worst-case bytes touched per frame may not exceed frame length x this.
WORK_FACTOR_BUDGET = 8


def default_bounds(config: EngineConfig) -> dict[str, int]:
    return {
        "adus_per_segment": config.max_adus_per_segment,
        "pdu_bytes": frame.MAX_PDU_DATA + 1,
        "history_ring": 16,
        "cipher_rounds": 20,
    }


def verify_program(config: EngineConfig,
                   bounds: dict[str, int] | None = None) -> list[str]:
    """Static self-check modeling the verifier: every loop must carry a
    declared bound within budget, and worst-case per-frame work must stay
    proportional to frame length. Violations are data, not errors.
    """
    if bounds is None:
        bounds = default_bounds(config)
    violations: list[str] = []
    names = {
        "adus_per_segment": "ADU loop",
        "pdu_bytes": "PDU copy",
        "history_ring": "history ring scan",
        "cipher_rounds": "cipher round loop",
    }
    for name, budget in LOOP_BUDGETS.items():
        bound = bounds.get(name)
        if bound is None:
            violations.append(f"unbounded {names[name]}")
            continue
        if bound > budget:
            violations.append(f"{names[name]} bound exceeds budget "
                              f"({bound} > {budget})")
    if all(bounds.get(k) is not None for k in LOOP_BUDGETS):
        # parse + transform + checksum repair each touch at most the payload
        # once per ADU pass; header scans add a constant per ADU.
        worst = (MAX_FRAME_BYTES * 3
                 + bounds["adus_per_segment"] * (frame.MBAP_SIZE + 2))
        factor = (worst + MAX_FRAME_BYTES - 1) // MAX_FRAME_BYTES
        if factor > WORK_FACTOR_BUDGET:
            violations.append(
                f"worst-case per-frame work {factor}x exceeds "
                f"{WORK_FACTOR_BUDGET}x frame length")
    return violations
