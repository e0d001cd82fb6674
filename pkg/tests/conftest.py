import struct
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from modshield import pcapio, simnet
from modshield.statestore import format_keystore_record, KeyRecord, KeySelector, Policy
from modshield.cipher import FlowCryptoKey

from reference import ref_build_ipv4_tcp

DEFAULT_KEY = bytes(range(32))


def make_capture(path: str, transactions: int = 20, seed: int = 1,
                 batch_size: int = 1, mixed: bool = False) -> list[pcapio.PcapPacket]:
    """Write a plaintext Modbus capture generated by an engine-free run."""
    scenario = simnet.Scenario(transactions=transactions, seed=seed,
                               batch_size=batch_size, key=DEFAULT_KEY)
    run = simnet.run_baseline(scenario)
    packets = [pcapio.PcapPacket(tick, tick % 1000000, raw)
               for tick, raw in run.taps["wire"].frames]
    if mixed:
        arp = b"\xff" * 6 + b"\xaa" * 6 + b"\x08\x06" + b"\x00" * 46
        http = ref_build_ipv4_tcp("10.0.0.1", "10.0.0.3", 40100, 80, 1,
                                  0x18, b"GET / HTTP/1.0\r\n\r\n")
        extra = [pcapio.PcapPacket(0, 0, arp), pcapio.PcapPacket(0, 1, http)]
        packets = extra[:1] + packets[:len(packets) // 2] + extra[1:] \
            + packets[len(packets) // 2:]
    pcapio.write_pcap(path, packets)
    return packets


def write_keystore(path: str, key: bytes = DEFAULT_KEY,
                   policy: Policy = Policy.PERMISSIVE) -> None:
    record = KeyRecord(KeySelector.canonical("10.0.0.1", "10.0.0.2", 502),
                       FlowCryptoKey(key, insecure_test_key=True), policy)
    Path(path).write_text("# test keystore\n" + format_keystore_record(record) + "\n")


@pytest.fixture
def keystore_file(tmp_path):
    path = str(tmp_path / "keys.txt")
    write_keystore(path)
    return path
