"""Map-style key/value stores mirroring eBPF map semantics.

A `Store` is a fixed-capacity bytes->bytes map: inserts on new keys fail
with CapacityExceeded once full (capacity is fixed at creation, like a
map sized at program load), and a store may be pinned to a filesystem
path so other handles can open it and observe flushed writes.

On top of the raw store sit two typed views: `Keystore` (pre-shared keys
selected by canonical peer pair + server port, with single-wildcard
matching) and `FlowTable` (per-flow stream-tracking state with an
explicit TTL sweep; no background threads, the datapath stays
deterministic).

Pinned file format: little-endian container — magic ``MSST``, version
u16, record count u32, then length-prefixed key/value records.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from enum import Enum

from .cipher import FlowCryptoKey
from .netcodec import ip_to_int, int_to_ip

MAGIC = b"MSST"
FORMAT_VERSION = 1

WILDCARD_IP = "0.0.0.0"
DEFAULT_SERVER_PORT = 502

HISTORY_DEPTH = 16


class StoreError(Exception):
    pass


class CapacityExceeded(StoreError):
    """Insert of a new key into a full store."""


class IoFailure(StoreError):
    pass


class FormatViolation(StoreError):
    """Pinned store file is corrupt or has the wrong magic/version."""


class Policy(Enum):
    STRICT = "strict"
    PERMISSIVE = "permissive"


class Store:
    """Fixed-capacity bytes->bytes map, optionally pinned to a file."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._data: dict[bytes, bytes] = {}
        self._pin_path: str | None = None
        self._pin_stamp: tuple[int, int] | None = None

    def __len__(self) -> int:
        self._maybe_refresh()
        return len(self._data)

    def lookup(self, key: bytes) -> bytes | None:
        self._maybe_refresh()
        return self._data.get(key)

    def insert(self, key: bytes, value: bytes) -> None:
        self._maybe_refresh()
        if key not in self._data and len(self._data) >= self.capacity:
            raise CapacityExceeded(f"store full at {self.capacity} entries")
        self._data[key] = value

    def delete(self, key: bytes) -> bool:
        self._maybe_refresh()
        return self._data.pop(key, None) is not None

    def keys(self) -> list[bytes]:
        self._maybe_refresh()
        return list(self._data)

    # -- pinning ----------------------------------------------------------

    def pin(self, path: str) -> None:
        """Bind this store to `path`; flush() persists, other handles see it."""
        self._pin_path = os.fspath(path)
        self.flush()

    def flush(self) -> None:
        if self._pin_path is None:
            return
        body = bytearray()
        body += MAGIC
        body += struct.pack("<HI", FORMAT_VERSION, len(self._data))
        for k, v in self._data.items():
            body += struct.pack("<I", len(k)) + k
            body += struct.pack("<I", len(v)) + v
        try:
            tmp = self._pin_path + ".tmp"
            with open(tmp, "wb") as f:
                f.write(body)
            os.replace(tmp, self._pin_path)
            st = os.stat(self._pin_path)
            self._pin_stamp = (st.st_mtime_ns, st.st_size)
        except OSError as e:
            raise IoFailure(str(e)) from e

    @classmethod
    def open(cls, path: str, capacity: int | None = None) -> "Store":
        """Open a pinned store; the handle re-reads the file when it changes."""
        path = os.fspath(path)
        data = cls._read_file(path)
        store = cls(capacity if capacity is not None else max(len(data), 1) * 2)
        store._data = data
        store._pin_path = path
        st = os.stat(path)
        store._pin_stamp = (st.st_mtime_ns, st.st_size)
        return store

    @staticmethod
    def _read_file(path: str) -> dict[bytes, bytes]:
        try:
            with open(path, "rb") as f:
                blob = f.read()
        except OSError as e:
            raise IoFailure(str(e)) from e
        if len(blob) < 10 or blob[:4] != MAGIC:
            raise FormatViolation("bad magic")
        version, count = struct.unpack_from("<HI", blob, 4)
        if version != FORMAT_VERSION:
            raise FormatViolation(f"unsupported version {version}")
        data: dict[bytes, bytes] = {}
        pos = 10
        for _ in range(count):
            try:
                (klen,) = struct.unpack_from("<I", blob, pos)
                k = bytes(blob[pos + 4:pos + 4 + klen])
                pos += 4 + klen
                (vlen,) = struct.unpack_from("<I", blob, pos)
                v = bytes(blob[pos + 4:pos + 4 + vlen])
                pos += 4 + vlen
                if len(k) != klen or len(v) != vlen:
                    raise FormatViolation("truncated record")
            except struct.error as e:
                raise FormatViolation("truncated record") from e
            data[k] = v
        return data

    def _maybe_refresh(self) -> None:
        if self._pin_path is None:
            return
        try:
            st = os.stat(self._pin_path)
        except OSError:
            return
        stamp = (st.st_mtime_ns, st.st_size)
        if stamp != self._pin_stamp:
            self._data = self._read_file(self._pin_path)
            self._pin_stamp = stamp


# -- keystore ------------------------------------------------------------


@dataclass(frozen=True)
class KeySelector:
    """Canonical (sorted) peer pair plus server port; 0.0.0.0 wildcards one peer."""
    peer_a: str
    peer_b: str
    server_port: int = DEFAULT_SERVER_PORT

    @classmethod
    def canonical(cls, ip1: str, ip2: str,
                  server_port: int = DEFAULT_SERVER_PORT) -> "KeySelector":
        a, b = sorted((ip1, ip2), key=ip_to_int)
        return cls(a, b, server_port)

    def pack(self) -> bytes:
        return struct.pack(">IIH", ip_to_int(self.peer_a),
                           ip_to_int(self.peer_b), self.server_port)

    @classmethod
    def unpack(cls, raw: bytes) -> "KeySelector":
        a, b, port = struct.unpack(">IIH", raw)
        return cls(int_to_ip(a), int_to_ip(b), port)


@dataclass
class KeyRecord:
    selector: KeySelector
    key: FlowCryptoKey
    policy: Policy = Policy.PERMISSIVE

    def pack_value(self) -> bytes:
        return self.key.key + bytes([0 if self.policy is Policy.STRICT else 1])

    @classmethod
    def unpack(cls, selector_raw: bytes, value_raw: bytes) -> "KeyRecord":
        if len(value_raw) != 33:
            raise FormatViolation("key record value must be 33 bytes")
        policy = Policy.STRICT if value_raw[32] == 0 else Policy.PERMISSIVE
        return cls(KeySelector.unpack(selector_raw),
                   FlowCryptoKey(value_raw[:32], insecure_test_key=True), policy)


class Keystore:
    """Pre-shared keys, looked up by canonical peer pair; exact beats wildcard."""

    def __init__(self, capacity: int = 1024, store: Store | None = None):
        self.store = store if store is not None else Store(capacity)

    def insert(self, record: KeyRecord) -> None:
        sel = record.selector
        wildcards = [sel.peer_a, sel.peer_b].count(WILDCARD_IP)
        if wildcards > 1:
            raise ValueError("at most one wildcard position allowed")
        self.store.insert(sel.pack(), record.pack_value())

    def lookup(self, ip1: str, ip2: str, server_port: int) -> KeyRecord | None:
        """Exact canonical match first, then single-wildcard candidates."""
        exact = KeySelector.canonical(ip1, ip2, server_port)
        candidates = [exact,
                      KeySelector.canonical(WILDCARD_IP, ip1, server_port),
                      KeySelector.canonical(WILDCARD_IP, ip2, server_port)]
        for sel in candidates:
            raw = self.store.lookup(sel.pack())
            if raw is not None:
                return KeyRecord.unpack(sel.pack(), raw)
        return None

    def records(self) -> list[KeyRecord]:
        out = []
        for k in self.store.keys():
            v = self.store.lookup(k)
            if v is not None:
                out.append(KeyRecord.unpack(k, v))
        return out


def parse_keystore_text(text: str) -> list[KeyRecord]:
    """Parse the bootstrap text format: `peerA peerB port policy keyhex64`."""
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatViolation(f"line {lineno}: expected 5 fields, got {len(parts)}")
        peer_a, peer_b, port_s, policy_s, keyhex = parts
        try:
            port = int(port_s)
            policy = Policy(policy_s.lower())
            key = bytes.fromhex(keyhex)
        except ValueError as e:
            raise FormatViolation(f"line {lineno}: {e}") from e
        if len(key) != 32:
            raise FormatViolation(f"line {lineno}: key must be 64 hex chars")
        records.append(KeyRecord(KeySelector.canonical(peer_a, peer_b, port),
                                 FlowCryptoKey(key, insecure_test_key=True), policy))
    return records


def format_keystore_record(record: KeyRecord) -> str:
    sel = record.selector
    return (f"{sel.peer_a} {sel.peer_b} {sel.server_port} "
            f"{record.policy.value} {record.key.key.hex()}")


def load_keystore(path: str, capacity: int = 1024) -> Keystore:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise IoFailure(str(e)) from e
    ks = Keystore(capacity)
    for rec in parse_keystore_text(text):
        ks.insert(rec)
    return ks


# -- flow state ----------------------------------------------------------


@dataclass
class PendingAdu:
    """An ADU split across segments: what is still owed and how to resume."""
    remaining: int       # bytes of the ADU not yet seen, [1, 253]
    nonce: bytes         # 12-byte nonce fixed when the ADU started
    offset_in_adu: int   # PDU-relative offset where the next byte transforms


@dataclass
class FlowState:
    next_seq: int = 0            # next expected TCP sequence (mod 2^32)
    pending: PendingAdu | None = None
    history: list[tuple[int, int]] = field(default_factory=list)  # (adu_start_seq, tid)
    established: bool = False
    last_touch: int = 0          # clock ticks, for the TTL sweep

    def remember_adu(self, adu_start_seq: int, transaction_id: int) -> None:
        self.history = [h for h in self.history if h[0] != adu_start_seq]
        self.history.append((adu_start_seq, transaction_id))
        if len(self.history) > HISTORY_DEPTH:
            self.history = self.history[-HISTORY_DEPTH:]

    def history_has_start(self, seq: int) -> bool:
        return any(s == seq for s, _ in self.history)


class FlowTable:
    """Per-flow state keyed by the directed 5-tuple, with explicit TTL sweep."""

    def __init__(self, capacity: int = 4096, ttl: int = 120):
        self.capacity = capacity
        self.ttl = ttl
        self._flows: dict[tuple, FlowState] = {}

    def get(self, key: tuple) -> FlowState | None:
        return self._flows.get(key)

    def get_or_create(self, key: tuple, now: int = 0) -> FlowState:
        state = self._flows.get(key)
        if state is None:
            if len(self._flows) >= self.capacity:
                raise CapacityExceeded(f"flow table full at {self.capacity}")
            state = FlowState(last_touch=now)
            self._flows[key] = state
        state.last_touch = now
        return state

    def delete(self, key: tuple) -> None:
        self._flows.pop(key, None)

    def sweep(self, now: int) -> int:
        """Drop flows idle longer than the TTL; returns how many were evicted."""
        stale = [k for k, v in self._flows.items() if now - v.last_touch > self.ttl]
        for k in stale:
            del self._flows[k]
        return len(stale)
