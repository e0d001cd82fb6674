"""Operator CLI: pcap sealing/opening, inspection, keystore management,
scenario execution and the verifier-style self check.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import secrets
import sys
from dataclasses import asdict

from . import datapath, frame, netcodec, pcapio, simnet
from .cipher import FlowCryptoKey
from .datapath import Direction, Engine, EngineConfig, Verdict
from .statestore import (IoFailure, FormatViolation, KeyRecord, KeySelector,
                         Policy, format_keystore_record, load_keystore,
                         parse_keystore_text)


class CliError(Exception):
    pass


def _engine_config(args, direction: Direction) -> EngineConfig:
    return EngineConfig(
        direction=direction,
        magic_protocol_id=int(args.magic, 16) if isinstance(args.magic, str) else args.magic,
        policy_default=Policy(args.policy),
    )


def cmd_seal_open(args, direction_override: Direction | None = None) -> int:
    direction = direction_override or Direction(args.direction)
    try:
        keystore = load_keystore(args.keys)
        packets = pcapio.read_pcap(args.pcap_in)
    except (IoFailure, FormatViolation, pcapio.PcapFormat, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    engine = Engine(_engine_config(args, direction), keystore)
    out_packets = []
    dropped = 0
    garble_suspect = 0
    for pkt in packets:
        verdict, out = engine.process(pkt.data)
        if verdict is Verdict.PASS:
            out_packets.append(pcapio.PcapPacket(pkt.ts_sec, pkt.ts_usec, out))
            if direction is Direction.INGRESS:
                garble_suspect += _count_garble(out)
        else:
            dropped += 1
    try:
        pcapio.write_pcap(args.pcap_out, out_packets)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    c = engine.counters
    print(f"frames_total={c.frames_total} frames_modbus={c.frames_modbus} "
          f"adus_encrypted={c.adus_encrypted} adus_decrypted={c.adus_decrypted} "
          f"drops_out_of_order={c.drops_out_of_order} drops_policy={c.drops_policy} "
          f"drops_header_split={c.drops_header_split} "
          f"aborts_malformed={c.aborts_malformed} "
          f"passthrough_non_modbus={c.passthrough_non_modbus} dropped={dropped}")
    if garble_suspect:
        # No MAC means a wrong key cannot be detected cryptographically;
        # implausible decrypted PDUs are only a heuristic signal.
        print(f"warning: {garble_suspect} decrypted ADUs look implausible "
              f"(wrong key?)", file=sys.stderr)
    return 0


def _count_garble(raw: bytes) -> int:
    try:
        view = netcodec.decode_packet(raw)
    except netcodec.Truncated:
        return 0
    if view is None or view.payload_len == 0:
        return 0
    try:
        adus, _ = frame.split_adus(view.payload, 1 << 16)
    except frame.FrameError:
        return 0
    bad = 0
    for adu in adus:
        if adu.header.protocol_id != frame.PROTOCOL_ID_MODBUS:
            continue
        cls = frame.classify_function_code(adu.pdu.function_code)
        if cls.category is frame.FcCategory.INVALID:
            bad += 1
    return bad


def cmd_inspect(args) -> int:
    magic = int(args.magic, 16) if isinstance(args.magic, str) else args.magic
    try:
        packets = pcapio.read_pcap(args.pcap_in)
    except (pcapio.PcapFormat, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for index, pkt in enumerate(packets):
        try:
            view = netcodec.decode_packet(pkt.data)
        except netcodec.Truncated:
            print(f"frame {index}: truncated")
            continue
        if view is None or view.payload_len == 0:
            continue
        flow = (f"{view.src_ip}:{view.src_port}->"
                f"{view.dst_ip}:{view.dst_port}")
        try:
            adus, trailing = frame.split_adus(view.payload, 1 << 16)
        except frame.FrameError as e:
            print(f"frame {index} {flow}: malformed ({e})")
            continue
        for adu in adus:
            h = adu.header
            base = (f"frame {index} {flow} tid={h.transaction_id} "
                    f"pid=0x{h.protocol_id:04X} unit=0x{h.unit_id:02X} "
                    f"len={h.length}")
            if h.protocol_id == magic:
                print(f"{base} ENCRYPTED data_len={len(adu.pdu.data)}")
            else:
                cls = frame.classify_function_code(adu.pdu.function_code)
                print(f"{base} fc={adu.pdu.function_code} {cls} "
                      f"data_len={len(adu.pdu.data)}")
        if trailing:
            print(f"frame {index} {flow}: trailing partial ADU of {trailing} bytes")
    return 0


def cmd_keygen(args) -> int:
    record = KeyRecord(
        KeySelector.canonical(args.peer_a, args.peer_b, args.port),
        FlowCryptoKey(secrets.token_bytes(32)), Policy(args.policy))
    try:
        try:
            with open(args.keys, "r", encoding="utf-8") as f:
                existing = parse_keystore_text(f.read())
        except FileNotFoundError:
            existing = []
        replaced = [r for r in existing if r.selector == record.selector]
        if replaced:
            print(f"warning: replacing existing key for {record.selector}",
                  file=sys.stderr)
        kept = [r for r in existing if r.selector != record.selector]
        with open(args.keys, "w", encoding="utf-8") as f:
            for r in kept + [record]:
                f.write(format_keystore_record(r) + "\n")
    except (OSError, FormatViolation) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"added key for {record.selector.peer_a} {record.selector.peer_b} "
          f"port {record.selector.server_port}")
    return 0


def cmd_simulate(args) -> int:
    try:
        with open(args.scenario, "r", encoding="utf-8") as f:
            spec = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.seed is not None:
        spec["seed"] = args.seed
    try:
        scenario = simnet.Scenario.from_dict(spec)
        result = simnet.run_scenario(scenario)
    except simnet.ScenarioInvalid as e:
        print(f"error: scenario invalid: {e}", file=sys.stderr)
        return 1
    print(f"transcript_identical_to_baseline={result.identical_to_baseline}")
    report = simnet.eavesdrop_report(result.taps["wire"], scenario.magic,
                                     result.known_plaintext_pdus)
    print(f"wire_adus={report.total_adus} "
          f"cleartext_fc_count={report.cleartext_fc_count} "
          f"chi_square={report.chi_square:.1f}")
    for name, counters in result.counters.items():
        print(f"{name}: {asdict(counters)}")
    if args.pcap_out:
        packets = [pcapio.PcapPacket(tick, 0, raw)
                   for tick, raw in result.taps["wire"].frames]
        pcapio.write_pcap(args.pcap_out, packets)
        print(f"wire tap written to {args.pcap_out}")
    return 0 if result.identical_to_baseline else 1


def cmd_verify(args) -> int:
    config = EngineConfig(direction=Direction.EGRESS,
                          max_adus_per_segment=args.max_adus)
    bounds = datapath.default_bounds(config)
    for name in args.drop_bound or []:
        bounds.pop(name, None)
    violations = datapath.verify_program(config, bounds)
    if violations:
        for v in violations:
            print(f"violation: {v}")
        return 1
    print("verifier self-check passed: all loop bounds within budget")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modshield",
        description="Transparent Modbus TCP encryption tools")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_engine_flags(p):
        p.add_argument("--keys", required=True, help="keystore text file")
        p.add_argument("--magic", default="0E0B",
                       help="encrypted-marker protocol id (hex16)")
        p.add_argument("--policy", choices=["strict", "permissive"],
                       default="permissive")

    p = sub.add_parser("seal", help="encrypt Modbus PDUs in a pcap")
    p.add_argument("--pcap-in", required=True)
    p.add_argument("--pcap-out", required=True)
    add_engine_flags(p)
    p.add_argument("--direction", choices=["egress", "ingress"], default="egress")
    p.set_defaults(func=lambda a: cmd_seal_open(a, Direction(a.direction)))

    p = sub.add_parser("open", help="decrypt Modbus PDUs in a pcap")
    p.add_argument("--pcap-in", required=True)
    p.add_argument("--pcap-out", required=True)
    add_engine_flags(p)
    p.add_argument("--direction", choices=["egress", "ingress"], default="ingress")
    p.set_defaults(func=lambda a: cmd_seal_open(a, Direction(a.direction)))

    p = sub.add_parser("inspect", help="list ADUs in a pcap")
    p.add_argument("--pcap-in", required=True)
    p.add_argument("--magic", default="0E0B")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("keygen", help="append a fresh pre-shared key")
    p.add_argument("--keys", required=True)
    p.add_argument("--peer-a", required=True, dest="peer_a")
    p.add_argument("--peer-b", required=True, dest="peer_b")
    p.add_argument("--port", type=int, default=502)
    p.add_argument("--policy", choices=["strict", "permissive"],
                   default="permissive")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("simulate", help="run a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pcap-out", default=None,
                   help="also export the wire tap as pcap")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="verifier-style loop-bound self check")
    p.add_argument("--max-adus", type=int, default=8)
    p.add_argument("--drop-bound", action="append", default=None,
                   help="remove a named bound (self-check testing)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
