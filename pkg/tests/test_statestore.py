import random
import subprocess
import sys

import pytest

from modshield import statestore
from modshield.cipher import FlowCryptoKey
from modshield.statestore import (CapacityExceeded, FlowTable, FormatViolation,
                                  IoFailure, KeyRecord, KeySelector, Keystore,
                                  Policy, Store)


def test_insert_lookup_delete():
    s = Store(16)
    s.insert(b"k", b"v")
    assert s.lookup(b"k") == b"v"
    s.insert(b"k", b"v2")  # overwrite
    assert s.lookup(b"k") == b"v2"
    assert s.delete(b"k")
    assert s.lookup(b"k") is None
    assert not s.delete(b"k")


def test_empty_store_lookup_absent():
    assert Store(1024).lookup(b"nope") is None


def test_capacity_enforced_on_new_keys():
    s = Store(1)
    s.insert(b"a", b"1")
    s.insert(b"a", b"2")  # overwrite is fine
    with pytest.raises(CapacityExceeded):
        s.insert(b"b", b"1")


def test_model_based_random_ops():
    rng = random.Random(99)
    store = Store(64)
    model: dict[bytes, bytes] = {}
    keys = [bytes([k]) for k in range(80)]
    for _ in range(5000):
        op = rng.randrange(3)
        k = rng.choice(keys)
        if op == 0:
            v = bytes([rng.randrange(256)])
            try:
                store.insert(k, v)
                model[k] = v
            except CapacityExceeded:
                assert k not in model and len(model) == 64
        elif op == 1:
            assert store.lookup(k) == model.get(k)
        else:
            assert store.delete(k) == (model.pop(k, None) is not None)
    for k in keys:
        assert store.lookup(k) == model.get(k)


def _record(ip_a="10.0.0.1", ip_b="10.0.0.2", port=502,
            policy=Policy.STRICT, byte=7):
    return KeyRecord(KeySelector.canonical(ip_a, ip_b, port),
                     FlowCryptoKey(bytes([byte]) * 32, insecure_test_key=True),
                     policy)


def test_keystore_exact_match():
    ks = Keystore()
    ks.insert(_record())
    rec = ks.lookup("10.0.0.2", "10.0.0.1", 502)
    assert rec is not None
    assert rec.policy is Policy.STRICT
    assert rec.key.key == b"\x07" * 32


def test_keystore_wildcard_match():
    ks = Keystore()
    ks.insert(_record(ip_a="0.0.0.0", ip_b="10.0.0.2", byte=9))
    rec = ks.lookup("10.0.0.9", "10.0.0.2", 502)
    assert rec is not None
    assert rec.key.key == b"\x09" * 32
    assert ks.lookup("10.0.0.9", "10.0.0.3", 502) is None


def test_keystore_exact_beats_wildcard():
    ks = Keystore()
    ks.insert(_record(ip_a="0.0.0.0", ip_b="10.0.0.2", byte=1))
    ks.insert(_record(ip_a="10.0.0.5", ip_b="10.0.0.2", byte=2))
    rec = ks.lookup("10.0.0.5", "10.0.0.2", 502)
    assert rec.key.key == b"\x02" * 32
    rec = ks.lookup("10.0.0.6", "10.0.0.2", 502)
    assert rec.key.key == b"\x01" * 32


def test_keystore_double_wildcard_rejected():
    ks = Keystore()
    with pytest.raises(ValueError):
        ks.insert(_record(ip_a="0.0.0.0", ip_b="0.0.0.0"))


def test_pin_flush_open_roundtrip(tmp_path):
    path = str(tmp_path / "store.msst")
    s = Store(32)
    s.insert(b"alpha", b"\x00\x01\x02")
    s.pin(path)
    s.insert(b"beta", bytes(range(64)))
    s.flush()
    other = Store.open(path)
    assert other.lookup(b"alpha") == b"\x00\x01\x02"
    assert other.lookup(b"beta") == bytes(range(64))


def test_two_handles_observe_flushed_writes(tmp_path):
    path = str(tmp_path / "shared.msst")
    a = Store(32)
    a.pin(path)
    b = Store.open(path)
    a.insert(b"k", b"v")
    a.flush()
    assert b.lookup(b"k") == b"v"


def test_open_in_fresh_process(tmp_path):
    path = str(tmp_path / "proc.msst")
    s = Store(8)
    s.insert(b"cross", b"process")
    s.pin(path)
    s.flush()
    code = (
        "from modshield.statestore import Store\n"
        f"s = Store.open({path!r})\n"
        "assert s.lookup(b'cross') == b'process'\n"
        "print('ok')\n")
    out = subprocess.run([sys.executable, "-c", code],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "ok"


def test_open_nonexistent_is_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        Store.open(str(tmp_path / "missing.msst"))


def test_corrupt_magic_is_format_violation(tmp_path):
    path = tmp_path / "bad.msst"
    path.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(FormatViolation):
        Store.open(str(path))


def test_keystore_text_roundtrip():
    text = (
        "# test keys\n"
        "10.0.0.1 10.0.0.2 502 strict " + "ab" * 32 + "\n"
        "\n"
        "0.0.0.0 10.0.0.9 1502 permissive " + "cd" * 32 + "\n")
    records = statestore.parse_keystore_text(text)
    assert len(records) == 2
    assert records[0].policy is Policy.STRICT
    assert records[1].selector.server_port == 1502
    lines = [statestore.format_keystore_record(r) for r in records]
    assert statestore.parse_keystore_text("\n".join(lines)) == records


def test_keystore_text_rejects_short_key():
    with pytest.raises(FormatViolation):
        statestore.parse_keystore_text("10.0.0.1 10.0.0.2 502 strict abcd\n")


def test_flow_table_ttl_sweep():
    ft = FlowTable(capacity=8, ttl=10)
    ft.get_or_create(("a",), now=0)
    ft.get_or_create(("b",), now=5)
    assert ft.sweep(now=12) == 1
    assert ft.get(("a",)) is None
    assert ft.get(("b",)) is not None


def test_flow_history_ring_bounded():
    state = statestore.FlowState()
    for i in range(40):
        state.remember_adu(i, i % 32)
    assert len(state.history) == statestore.HISTORY_DEPTH
    assert state.history_has_start(39)
    assert not state.history_has_start(3)
