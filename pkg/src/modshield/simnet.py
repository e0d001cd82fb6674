"""Deterministic simulated network for exercising the engines end to end.

A scenario drives a Modbus client model against a server model over a
virtual wire with three tap points (client-side cleartext, wire,
server-side cleartext). Four engine instances sit on the path, one per
host per direction, exactly like a symmetric deployment. The same
scenario also runs with engines absent; the application transcripts of
the two runs must match byte for byte.

The TCP model is deliberately small: correct sequence numbers,
segmentation, coalesced retransmission after a drop, no congestion
control. That is all the engines ever look at.

All randomness comes from one seeded generator, so failures replay.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any

from . import datapath, frame, netcodec
from .cipher import FlowCryptoKey
from .datapath import Direction, Engine, EngineConfig, Verdict
from .statestore import KeyRecord, KeySelector, Keystore, Policy

CLIENT_MAC = bytes.fromhex("020000000001")
SERVER_MAC = bytes.fromhex("020000000002")

UNIT_ID = 0x11
EXC_ILLEGAL_ADDRESS = 0x02
VALID_REGISTERS = 1000       # server accepts addresses [0, VALID_REGISTERS)
FC_ECHO = 65                 # user-defined echo function

MAX_RETRANSMIT_ROUNDS = 8


class ScenarioInvalid(Exception):
    pass


@dataclass
class Fault:
    kind: str                 # split | reorder | retransmit | inject | eavesdrop
    transaction: int = 0
    at_byte: int = 0
    fc: int = 6
    address: int = 0
    value: int = 0


@dataclass
class Scenario:
    transactions: int = 100
    seed: int = 1
    batch_size: int = 1       # request ADUs coalesced into one segment
    client_ip: str = "10.0.0.1"
    server_ip: str = "10.0.0.2"
    server_port: int = 502
    client_port: int = 40001
    key: bytes = bytes(range(32))
    policy: Policy = Policy.PERMISSIVE
    magic: int = datapath.DEFAULT_MAGIC
    faults: list[Fault] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Scenario":
        faults = [Fault(kind=f["type"],
                        transaction=f.get("transaction", 0),
                        at_byte=f.get("at_byte", 0),
                        fc=f.get("fc", 6),
                        address=f.get("address", 0),
                        value=f.get("value", 0))
                  for f in d.get("faults", [])]
        return cls(
            transactions=d.get("transactions", 100),
            seed=d.get("seed", 1),
            batch_size=d.get("batch_size", 1),
            client_ip=d.get("client_ip", "10.0.0.1"),
            server_ip=d.get("server_ip", "10.0.0.2"),
            server_port=d.get("server_port", 502),
            client_port=d.get("client_port", 40001),
            key=bytes.fromhex(d["key_hex"]) if "key_hex" in d else bytes(range(32)),
            policy=Policy(d.get("policy", "permissive")),
            magic=int(d.get("magic", datapath.DEFAULT_MAGIC)),
            faults=faults,
        )


@dataclass
class TapRecord:
    position: str             # client_clear | wire | server_clear
    frames: list[tuple[int, bytes]] = field(default_factory=list)

    def record(self, tick: int, raw: bytes) -> None:
        self.frames.append((tick, bytes(raw)))


@dataclass
class ScenarioResult:
    taps: dict[str, TapRecord]
    counters: dict[str, datapath.EngineCounters]
    transcript: list[tuple[bytes, bytes]]   # (request ADU, response ADU)
    registers: dict[int, int]
    known_plaintext_pdus: list[bytes]
    transcript_match: bool
    registers_match: bool

    @property
    def identical_to_baseline(self) -> bool:
        return self.transcript_match and self.registers_match


class ServerModel:
    """Holding-register server: FC 3/6/16, FC 65 echo, exception responses."""

    def __init__(self):
        self.registers: dict[int, int] = {}

    def _valid(self, address: int, count: int = 1) -> bool:
        return 0 <= address and address + count <= VALID_REGISTERS

    def handle(self, adu: frame.Adu) -> frame.Adu:
        fc = adu.pdu.function_code
        data = adu.pdu.data
        try:
            if fc == 3:
                addr, count = int.from_bytes(data[0:2], "big"), int.from_bytes(data[2:4], "big")
                if not self._valid(addr, count) or not 1 <= count <= 125:
                    return self._exception(adu, fc)
                values = b"".join(self.registers.get(addr + i, 0).to_bytes(2, "big")
                                  for i in range(count))
                return self._response(adu, fc, bytes([2 * count]) + values)
            if fc == 6:
                addr, value = int.from_bytes(data[0:2], "big"), int.from_bytes(data[2:4], "big")
                if not self._valid(addr):
                    return self._exception(adu, fc)
                self.registers[addr] = value
                return self._response(adu, fc, data[:4])
            if fc == 16:
                addr = int.from_bytes(data[0:2], "big")
                count = int.from_bytes(data[2:4], "big")
                if not self._valid(addr, count) or len(data) < 5 + 2 * count:
                    return self._exception(adu, fc)
                for i in range(count):
                    self.registers[addr + i] = int.from_bytes(
                        data[5 + 2 * i:7 + 2 * i], "big")
                return self._response(adu, fc, data[:4])
            if fc == FC_ECHO:
                return self._response(adu, fc, data)
            return self._exception(adu, fc, code=0x01)
        except (IndexError, ValueError):
            return self._exception(adu, fc, code=0x03)

    @staticmethod
    def _response(req: frame.Adu, fc: int, data: bytes) -> frame.Adu:
        header = frame.MbapHeader(req.header.transaction_id,
                                  frame.PROTOCOL_ID_MODBUS, 2 + len(data),
                                  req.header.unit_id)
        return frame.Adu(header, frame.Pdu(fc, data))

    @staticmethod
    def _exception(req: frame.Adu, fc: int, code: int = EXC_ILLEGAL_ADDRESS) -> frame.Adu:
        header = frame.MbapHeader(req.header.transaction_id,
                                  frame.PROTOCOL_ID_MODBUS, 3, req.header.unit_id)
        return frame.Adu(header, frame.Pdu((fc + 128) & 0xFF, bytes([code])))


class ClientModel:
    """Generates randomized requests covering every function-code class."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.next_tid = 0

    def make_request(self) -> frame.Adu:
        # Small rolling tid window on purpose: transaction ids repeat, the
        # nonce must still stay unique via the ADU's sequence position.
        tid = self.next_tid % 32
        self.next_tid += 1
        choice = self.rng.randrange(10)
        if choice < 4:
            addr = self.rng.randrange(0, VALID_REGISTERS - 8)
            count = self.rng.randrange(1, 9)
            pdu = frame.Pdu(3, addr.to_bytes(2, "big") + count.to_bytes(2, "big"))
        elif choice < 6:
            addr = self.rng.randrange(0, VALID_REGISTERS)
            value = self.rng.randrange(0, 0x10000)
            pdu = frame.Pdu(6, addr.to_bytes(2, "big") + value.to_bytes(2, "big"))
        elif choice < 8:
            addr = self.rng.randrange(0, VALID_REGISTERS - 4)
            count = self.rng.randrange(1, 5)
            values = b"".join(self.rng.randrange(0, 0x10000).to_bytes(2, "big")
                              for _ in range(count))
            pdu = frame.Pdu(16, addr.to_bytes(2, "big") + count.to_bytes(2, "big")
                            + bytes([2 * count]) + values)
        elif choice < 9:
            data = bytes(self.rng.randrange(256) for _ in range(self.rng.randrange(0, 17)))
            pdu = frame.Pdu(FC_ECHO, data)
        else:
            # Out-of-range read: forces an exception response on the wire.
            pdu = frame.Pdu(3, (60000).to_bytes(2, "big") + (2).to_bytes(2, "big"))
        header = frame.MbapHeader(tid, frame.PROTOCOL_ID_MODBUS,
                                  2 + len(pdu.data), UNIT_ID)
        return frame.Adu(header, pdu)


class _Reassembler:
    """Per-flow in-order byte stream with out-of-order buffering.

    Buffering matters only for baseline runs with reorder faults; with
    engines on, the ingress engine drops out-of-order segments first.
    """

    def __init__(self, isn: int):
        self.expected = isn
        self.stream = bytearray()
        self.future: dict[int, bytes] = {}

    def deliver(self, seq: int, payload: bytes) -> None:
        if datapath.seq_lt(seq, self.expected):
            return  # duplicate / old data
        self.future[seq] = payload
        while self.expected in self.future:
            chunk = self.future.pop(self.expected)
            self.stream += chunk
            self.expected = datapath.seq_add(self.expected, len(chunk))


class _DirectedPath:
    """One direction of the connection: sender egress -> wire -> receiver ingress."""

    def __init__(self, sim: "_SimRun", src_ip: str, src_port: int,
                 dst_ip: str, dst_port: int, src_mac: bytes, dst_mac: bytes,
                 isn: int, egress: Engine | None, ingress: Engine | None,
                 tap_clear: TapRecord, tap_wire: TapRecord,
                 reassembler: _Reassembler):
        self.sim = sim
        self.src_ip, self.src_port = src_ip, src_port
        self.dst_ip, self.dst_port = dst_ip, dst_port
        self.src_mac, self.dst_mac = src_mac, dst_mac
        self.isn = isn
        self.snd_nxt = isn
        self.sent = bytearray()
        self.egress = egress
        self.ingress = ingress
        self.tap_clear = tap_clear
        self.tap_wire = tap_wire
        self.reassembler = reassembler

    def _frame_for(self, seq: int, payload: bytes) -> bytes:
        return netcodec.build_tcp_frame(
            self.src_mac, self.dst_mac, self.src_ip, self.dst_ip,
            self.src_port, self.dst_port, seq, 0,
            netcodec.TCP_FLAG_PSH | netcodec.TCP_FLAG_ACK, payload)

    def send(self, data: bytes, segment_plan: list[int] | None = None,
             wire_plan=None, resend_after: bool = False) -> None:
        """Transmit `data`, split per `segment_plan` (byte counts).

        `wire_plan` may mutate the list of wire entries once (reorder,
        duplicate, inject). Drops trigger a coalesced retransmission from
        the first lost byte, like a simple TCP sender.
        """
        plan = segment_plan or [len(data)]
        if sum(plan) != len(data) or any(p <= 0 for p in plan):
            raise ScenarioInvalid(f"segment plan {plan} does not cover {len(data)} bytes")
        segs = []
        pos = 0
        for length in plan:
            segs.append((self.snd_nxt, bytes(data[pos:pos + length])))
            self.snd_nxt = datapath.seq_add(self.snd_nxt, length)
            pos += length
        self.sent += data
        self._deliver(segs, wire_plan)
        if resend_after:
            self._deliver(list(segs), None)

    def _deliver(self, segs: list[tuple[int, bytes]], wire_plan) -> None:
        pending = segs
        for round_no in range(MAX_RETRANSMIT_ROUNDS):
            wire: list[tuple[int, bytes]] = []
            lost_from: int | None = None
            for seq, chunk in pending:
                raw = self._frame_for(seq, chunk)
                self.tap_clear.record(self.sim.tick(), raw)
                if self.egress is not None:
                    verdict, out = self.egress.process(raw)
                else:
                    verdict, out = Verdict.PASS, raw
                if verdict is Verdict.PASS:
                    wire.append((seq, out))
                elif lost_from is None or datapath.seq_lt(seq, lost_from):
                    lost_from = seq
            if wire_plan is not None and round_no == 0:
                wire = wire_plan(wire)
            for seq, raw in wire:
                self.tap_wire.record(self.sim.tick(), raw)
                if self.ingress is not None:
                    verdict, out = self.ingress.process(raw)
                else:
                    verdict, out = Verdict.PASS, raw
                if verdict is Verdict.PASS:
                    view = netcodec.decode_packet(out)
                    if view is not None:
                        self.sim.deliver_to_receiver(self, view)
                elif seq >= 0 and (lost_from is None or datapath.seq_lt(seq, lost_from)):
                    lost_from = seq
            if lost_from is None:
                return
            start = (lost_from - self.isn) % datapath.SEQ_MOD
            end = (self.snd_nxt - self.isn) % datapath.SEQ_MOD
            pending = [(lost_from, bytes(self.sent[start:end]))]
            wire_plan = None
        raise ScenarioInvalid("segment still lost after retransmission budget")


class _SimRun:
    """One execution of a scenario, with or without engines."""

    def __init__(self, scenario: Scenario, engines_enabled: bool):
        self.scenario = scenario
        self.clock = 0
        self.taps = {
            "client_clear": TapRecord("client_clear"),
            "wire": TapRecord("wire"),
            "server_clear": TapRecord("server_clear"),
        }
        self.server = ServerModel()
        self.client = ClientModel(random.Random(scenario.seed))
        self.transcript: list[tuple[bytes, bytes]] = []
        self.known_plaintext_pdus: list[bytes] = []
        self.engines: dict[str, Engine] = {}

        s = scenario
        if engines_enabled:
            keystore = Keystore()
            keystore.insert(KeyRecord(
                KeySelector.canonical(s.client_ip, s.server_ip, s.server_port),
                FlowCryptoKey(s.key, insecure_test_key=True), s.policy))
            def engine(direction: Direction) -> Engine:
                cfg = EngineConfig(direction=direction, magic_protocol_id=s.magic,
                                   modbus_port=s.server_port,
                                   policy_default=s.policy)
                return Engine(cfg, keystore)
            self.engines = {
                "client_egress": engine(Direction.EGRESS),
                "server_ingress": engine(Direction.INGRESS),
                "server_egress": engine(Direction.EGRESS),
                "client_ingress": engine(Direction.INGRESS),
            }
        eng = self.engines.get

        client_isn, server_isn = 1000, 5000
        self.server_rx = _Reassembler(client_isn)
        self.client_rx = _Reassembler(server_isn)
        self.extra_rx: dict[tuple, _Reassembler] = {}
        self.c2s = _DirectedPath(
            self, s.client_ip, s.client_port, s.server_ip, s.server_port,
            CLIENT_MAC, SERVER_MAC, client_isn,
            eng("client_egress"), eng("server_ingress"),
            self.taps["client_clear"], self.taps["wire"], self.server_rx)
        self.s2c = _DirectedPath(
            self, s.server_ip, s.server_port, s.client_ip, s.client_port,
            SERVER_MAC, CLIENT_MAC, server_isn,
            eng("server_egress"), eng("client_ingress"),
            self.taps["server_clear"], self.taps["wire"], self.client_rx)
        # Cleartext as the server application sees it, for the server-side tap,
        # is recorded by the ingress pass-through above; the s2c path records
        # its cleartext at the server_clear tap before its egress engine.
        self.server_consumed = 0
        self.client_consumed = 0

    def tick(self) -> int:
        self.clock += 1
        return self.clock

    def deliver_to_receiver(self, path: _DirectedPath, view: netcodec.PacketView) -> None:
        flow = (view.src_ip, view.src_port, view.dst_ip, view.dst_port)
        main_flow = (path.src_ip, path.src_port, path.dst_ip, path.dst_port)
        if flow == main_flow:
            path.reassembler.deliver(view.seq, view.payload)
        else:
            # Traffic on an unexpected flow (e.g. an injected forgery that a
            # permissive ingress let through) reaches the server application
            # on its own connection.
            rx = self.extra_rx.setdefault(flow, _Reassembler(view.seq))
            rx.deliver(view.seq, view.payload)
            if view.dst_ip == self.scenario.server_ip \
                    and view.dst_port == self.scenario.server_port:
                self._server_consume(rx)

    def _server_consume(self, rx: _Reassembler) -> list[frame.Adu]:
        adus, trailing = frame.split_adus(bytes(rx.stream), 1 << 16)
        consumed = len(rx.stream) - trailing
        responses = [self.server.handle(adu) for adu in adus]
        rx.stream = rx.stream[consumed:]
        return responses

    # -- scenario driving -------------------------------------------------

    def _faults_for(self, txn: int) -> list[Fault]:
        return [f for f in self.scenario.faults if f.transaction == txn]

    def _make_inject_frame(self, fault: Fault) -> bytes:
        s = self.scenario
        pdu = frame.Pdu(fault.fc, fault.address.to_bytes(2, "big")
                        + fault.value.to_bytes(2, "big"))
        adu = frame.Adu(frame.MbapHeader(0x7777, frame.PROTOCOL_ID_MODBUS,
                                         2 + len(pdu.data), UNIT_ID), pdu)
        return netcodec.build_tcp_frame(
            bytes.fromhex("02000000000f"), SERVER_MAC,
            s.client_ip, s.server_ip, 49999, s.server_port,
            90000, 0, netcodec.TCP_FLAG_PSH | netcodec.TCP_FLAG_ACK,
            frame.serialize_adu(adu))

    def run(self) -> None:
        s = self.scenario
        txn = 0
        while txn < s.transactions:
            faults = self._faults_for(txn)
            reorder = any(f.kind == "reorder" for f in faults)
            batch = 2 if reorder else min(s.batch_size, s.transactions - txn)
            requests = [self.client.make_request() for _ in range(batch)]
            req_bytes = [frame.serialize_adu(a) for a in requests]
            for b in req_bytes:
                self.known_plaintext_pdus.append(b[frame.MBAP_SIZE:])

            segment_plan: list[int] | None = None
            wire_plan = None
            resend_after = False
            data = b"".join(req_bytes)
            if reorder:
                # One segment per request; swap the two on the wire.
                segment_plan = [len(b) for b in req_bytes]
                def wire_plan(entries):
                    if len(entries) >= 2:
                        entries[0], entries[1] = entries[1], entries[0]
                    return entries
            for f in faults:
                if f.kind == "split":
                    if not 0 < f.at_byte < len(data):
                        raise ScenarioInvalid(
                            f"split at byte {f.at_byte} outside segment of {len(data)}")
                    segment_plan = [f.at_byte, len(data) - f.at_byte]
                elif f.kind == "retransmit":
                    resend_after = True
                elif f.kind == "inject":
                    injected = self._make_inject_frame(f)
                    def wire_plan(entries, _inj=injected):
                        entries.append((-1, _inj))
                        return entries

            self.c2s.send(data, segment_plan, wire_plan, resend_after)
            responses = self._server_consume_main()
            resp_bytes = [frame.serialize_adu(a) for a in responses]
            for b in resp_bytes:
                self.known_plaintext_pdus.append(b[frame.MBAP_SIZE:])
            if resp_bytes:
                self.s2c.send(b"".join(resp_bytes))
            self._client_consume(requests)
            txn += batch

    def _server_consume_main(self) -> list[frame.Adu]:
        rx = self.server_rx
        adus, trailing = frame.split_adus(bytes(rx.stream[self.server_consumed:]),
                                          1 << 16)
        span = len(rx.stream) - self.server_consumed - trailing
        self.server_consumed += span
        return [self.server.handle(adu) for adu in adus]

    def _client_consume(self, requests: list[frame.Adu]) -> None:
        rx = self.client_rx
        adus, trailing = frame.split_adus(bytes(rx.stream[self.client_consumed:]),
                                          1 << 16)
        span = len(rx.stream) - self.client_consumed - trailing
        self.client_consumed += span
        by_tid = {a.header.transaction_id: a for a in adus}
        for req in requests:
            resp = by_tid.get(req.header.transaction_id)
            self.transcript.append((
                frame.serialize_adu(req),
                frame.serialize_adu(resp) if resp is not None else b""))


def run_scenario(scenario: Scenario) -> ScenarioResult:
    """Run with engines and against the engine-free baseline; compare."""
    engine_run = _SimRun(scenario, engines_enabled=True)
    engine_run.run()
    baseline = _SimRun(scenario, engines_enabled=False)
    baseline.run()
    return ScenarioResult(
        taps=engine_run.taps,
        counters={name: eng.counters for name, eng in engine_run.engines.items()},
        transcript=engine_run.transcript,
        registers=dict(engine_run.server.registers),
        known_plaintext_pdus=engine_run.known_plaintext_pdus,
        transcript_match=engine_run.transcript == baseline.transcript,
        registers_match=engine_run.server.registers == baseline.server.registers,
    )


def run_baseline(scenario: Scenario) -> _SimRun:
    run = _SimRun(scenario, engines_enabled=False)
    run.run()
    return run


# -- eavesdropper's view -------------------------------------------------


@dataclass
class EavesdropReport:
    cleartext_fc_count: int
    total_adus: int
    header_fields_visible: list[dict[str, int]]
    ciphertext_byte_histogram: list[int]
    chi_square: float


def eavesdrop_report(tap: TapRecord, magic: int = datapath.DEFAULT_MAGIC,
                     known_plaintext_pdus: list[bytes] | None = None) -> EavesdropReport:
    """What an attacker on the wire can read.

    MBAP header fields stay visible by design (the length field delimits
    ADUs without decryption); the report counts ADUs whose PDU is readable
    plaintext and histograms the encrypted PDU bytes. The chi-square
    statistic is reported, never asserted against a threshold.
    """
    known = set(known_plaintext_pdus or [])
    cleartext = 0
    total = 0
    headers = []
    histogram = [0] * 256
    for _, raw in tap.frames:
        try:
            view = netcodec.decode_packet(raw)
        except netcodec.Truncated:
            continue
        if view is None or view.payload_len == 0:
            continue
        try:
            adus, _ = frame.split_adus(view.payload, 1 << 16)
        except frame.FrameError:
            continue
        for adu in adus:
            total += 1
            h = adu.header
            headers.append({"transaction_id": h.transaction_id,
                            "protocol_id": h.protocol_id,
                            "length": h.length, "unit_id": h.unit_id})
            pdu_bytes = bytes([adu.pdu.function_code]) + adu.pdu.data
            if h.protocol_id == frame.PROTOCOL_ID_MODBUS:
                cls = frame.classify_function_code(adu.pdu.function_code)
                if cls.category is not frame.FcCategory.INVALID:
                    cleartext += 1
            elif known and pdu_bytes in known:
                cleartext += 1
            if h.protocol_id == magic:
                for b in pdu_bytes:
                    histogram[b] += 1
    n = sum(histogram)
    chi = 0.0
    if n:
        expected = n / 256.0
        chi = sum((c - expected) ** 2 / expected for c in histogram)
    return EavesdropReport(cleartext, total, headers, histogram, chi)
