import json

from modshield import pcapio
from modshield.cli import main

from conftest import make_capture, write_keystore


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def test_seal_open_roundtrip(tmp_path, keystore_file, capsys):
    fixture = str(tmp_path / "clear.pcap")
    sealed = str(tmp_path / "sealed.pcap")
    opened = str(tmp_path / "opened.pcap")
    make_capture(fixture, transactions=15)
    assert main(["seal", "--pcap-in", fixture, "--pcap-out", sealed,
                 "--keys", keystore_file]) == 0
    assert main(["open", "--pcap-in", sealed, "--pcap-out", opened,
                 "--keys", keystore_file]) == 0
    assert read_bytes(opened) == read_bytes(fixture)
    assert read_bytes(sealed) != read_bytes(fixture)
    out = capsys.readouterr().out
    assert "adus_encrypted=30" in out
    assert "adus_decrypted=30" in out


def test_seal_passthrough_non_modbus(tmp_path, keystore_file, capsys):
    from reference import ref_build_ipv4_tcp
    fixture = str(tmp_path / "http.pcap")
    sealed = str(tmp_path / "sealed.pcap")
    arp = b"\xff" * 6 + b"\xaa" * 6 + b"\x08\x06" + b"\x00" * 46
    http = ref_build_ipv4_tcp("10.0.0.1", "10.0.0.3", 40100, 80, 1,
                              0x18, b"GET / HTTP/1.0\r\n\r\n")
    pcapio.write_pcap(fixture, [pcapio.PcapPacket(0, 0, arp),
                                pcapio.PcapPacket(0, 1, http)])
    assert main(["seal", "--pcap-in", fixture, "--pcap-out", sealed,
                 "--keys", keystore_file]) == 0
    assert read_bytes(sealed)[24:] == read_bytes(fixture)[24:]
    assert "frames_modbus=0" in capsys.readouterr().out


def test_open_with_wrong_key_warns_not_fails(tmp_path, keystore_file, capsys):
    fixture = str(tmp_path / "clear.pcap")
    sealed = str(tmp_path / "sealed.pcap")
    opened = str(tmp_path / "opened.pcap")
    wrong_keys = str(tmp_path / "wrong.txt")
    make_capture(fixture, transactions=10)
    write_keystore(wrong_keys, key=b"\x5a" * 32)
    assert main(["seal", "--pcap-in", fixture, "--pcap-out", sealed,
                 "--keys", keystore_file]) == 0
    assert main(["open", "--pcap-in", sealed, "--pcap-out", opened,
                 "--keys", wrong_keys]) == 0
    assert read_bytes(opened) != read_bytes(fixture)  # garbled, undetectable


def test_inspect_output(tmp_path, keystore_file, capsys):
    fixture = str(tmp_path / "clear.pcap")
    sealed = str(tmp_path / "sealed.pcap")
    make_capture(fixture, transactions=20, seed=5)
    assert main(["inspect", "--pcap-in", fixture]) == 0
    out = capsys.readouterr().out
    assert "fc=3 Public" in out
    assert "ExceptionResponse(orig=" in out
    main(["seal", "--pcap-in", fixture, "--pcap-out", sealed,
          "--keys", keystore_file])
    capsys.readouterr()
    assert main(["inspect", "--pcap-in", sealed]) == 0
    out = capsys.readouterr().out
    assert "ENCRYPTED" in out
    assert "fc=" not in out


def test_inspect_bad_pcap(tmp_path, capsys):
    bad = tmp_path / "bad.pcap"
    bad.write_bytes(b"not a pcap at all")
    assert main(["inspect", "--pcap-in", str(bad)]) == 1


def test_keygen_appends_and_replaces(tmp_path, capsys):
    keys = str(tmp_path / "keys.txt")
    assert main(["keygen", "--keys", keys, "--peer-a", "10.0.0.1",
                 "--peer-b", "10.0.0.2", "--policy", "strict"]) == 0
    lines = [l for l in open(keys).read().splitlines() if l.strip()]
    assert len(lines) == 1
    fields = lines[0].split()
    assert fields[3] == "strict"
    assert len(fields[4]) == 64
    first_key = fields[4]
    assert main(["keygen", "--keys", keys, "--peer-a", "10.0.0.2",
                 "--peer-b", "10.0.0.1"]) == 0
    lines = [l for l in open(keys).read().splitlines() if l.strip()]
    assert len(lines) == 1  # same canonical selector: replaced
    assert lines[0].split()[4] != first_key
    err = capsys.readouterr().err
    assert "replacing" in err


def test_keygen_unwritable_path(tmp_path):
    assert main(["keygen", "--keys", str(tmp_path / "no" / "dir" / "k.txt"),
                 "--peer-a", "10.0.0.1", "--peer-b", "10.0.0.2"]) == 1


def test_simulate_command(tmp_path, capsys):
    scenario = {"transactions": 10, "seed": 6,
                "faults": [{"type": "split", "transaction": 2, "at_byte": 8}]}
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(scenario))
    wire = str(tmp_path / "wire.pcap")
    assert main(["simulate", "--scenario", str(path), "--pcap-out", wire]) == 0
    out = capsys.readouterr().out
    assert "transcript_identical_to_baseline=True" in out
    assert "cleartext_fc_count=0" in out
    packets = pcapio.read_pcap(wire)
    assert packets


def test_verify_exit_codes(capsys):
    assert main(["verify"]) == 0
    assert main(["verify", "--max-adus", str(1 << 20)]) == 1
    assert main(["verify", "--drop-bound", "pdu_bytes"]) == 1
    out = capsys.readouterr().out
    assert "unbounded PDU copy" in out


def test_unknown_flag_is_usage_error(capsys):
    import pytest
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--bogus"])
    assert exc.value.code == 2
