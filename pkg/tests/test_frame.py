import pytest
from hypothesis import given, strategies as st

from modshield import frame


def test_parse_mbap_read_request():
    h = frame.parse_mbap(bytes.fromhex("00010000000611"))
    assert (h.transaction_id, h.protocol_id, h.length, h.unit_id) == (1, 0, 6, 0x11)


def test_parse_mbap_unusual_fields():
    h = frame.parse_mbap(bytes.fromhex("FFFF0E0B000200"))
    assert h.transaction_id == 0xFFFF
    assert h.protocol_id == 0x0E0B
    assert h.length == 2
    assert h.unit_id == 0


def test_parse_mbap_truncated():
    with pytest.raises(frame.TruncatedHeader):
        frame.parse_mbap(b"\x00" * 6)
    with pytest.raises(frame.TruncatedHeader):
        frame.parse_mbap(b"\x00" * 10, offset=5)


def test_serialize_read_holding_registers():
    adu = frame.Adu(frame.MbapHeader(1, 0, 6, 0x11),
                    frame.Pdu(3, bytes.fromhex("006B0003")))
    assert frame.serialize_adu(adu) == bytes.fromhex("0001000000061103006B0003")


def test_serialize_minimal_adu():
    adu = frame.Adu(frame.MbapHeader(0, 0, 2, 0), frame.Pdu(1, b""))
    assert frame.serialize_adu(adu) == bytes.fromhex("0000000000020001")


def test_serialize_length_mismatch():
    adu = frame.Adu(frame.MbapHeader(0, 0, 9, 0), frame.Pdu(3, b"\x01\x02\x03"))
    with pytest.raises(frame.InvariantViolation):
        frame.serialize_adu(adu)


def _adu(tid=1, fc=3, data=b"\x00\x01\x00\x02", unit=0x11, pid=0):
    return frame.Adu(frame.MbapHeader(tid, pid, 2 + len(data), unit),
                     frame.Pdu(fc, data))


def test_split_two_adus():
    a, b = _adu(tid=1), _adu(tid=2)
    payload = frame.serialize_adu(a) + frame.serialize_adu(b)
    adus, trailing = frame.split_adus(payload, 8)
    assert trailing == 0
    assert [frame.serialize_adu(x) for x in adus] == \
        [frame.serialize_adu(a), frame.serialize_adu(b)]


def test_split_trailing_partial():
    a, b = _adu(tid=1), _adu(tid=2)
    payload = frame.serialize_adu(a) + frame.serialize_adu(b)[:5]
    adus, trailing = frame.split_adus(payload, 8)
    assert len(adus) == 1
    assert trailing == 5


def test_split_empty_payload():
    assert frame.split_adus(b"", 8) == ([], 0)


def test_split_malformed_length():
    bad = frame.MbapHeader(1, 0, 0, 0).to_bytes() + b"\x03"
    with pytest.raises(frame.MalformedLength):
        frame.split_adus(bad, 8)


def test_split_budget_exceeded():
    payload = frame.serialize_adu(_adu()) * 3
    with pytest.raises(frame.BudgetExceeded):
        frame.split_adus(payload, 2)


def test_classification_examples():
    assert frame.classify_function_code(3).category is frame.FcCategory.PUBLIC
    assert frame.classify_function_code(100).category is frame.FcCategory.USER_DEFINED
    cls = frame.classify_function_code(131)
    assert cls.category is frame.FcCategory.EXCEPTION_RESPONSE
    assert cls.original_code == 3
    assert frame.classify_function_code(0).category is frame.FcCategory.INVALID


def test_classification_total_and_exclusive():
    counts = {c: 0 for c in frame.FcCategory}
    for code in range(256):
        counts[frame.classify_function_code(code).category] += 1
    assert counts[frame.FcCategory.INVALID] == 1
    assert counts[frame.FcCategory.EXCEPTION_RESPONSE] == 128
    assert counts[frame.FcCategory.USER_DEFINED] == 8 + 11
    assert counts[frame.FcCategory.PUBLIC] == 256 - 1 - 128 - 19


adu_strategy = st.builds(
    _adu,
    tid=st.integers(0, 0xFFFF),
    fc=st.integers(1, 255),
    data=st.binary(max_size=frame.MAX_PDU_DATA),
    unit=st.integers(0, 255),
)


@given(adu_strategy)
def test_roundtrip_property(adu):
    assert frame.parse_adu(frame.serialize_adu(adu)) == adu


@given(st.lists(adu_strategy, max_size=6), st.integers(0, 6))
def test_split_conservation_property(adus, cut):
    payload = b"".join(frame.serialize_adu(a) for a in adus)
    payload = payload[:len(payload) - cut] if cut <= len(payload) else payload
    try:
        parsed, trailing = frame.split_adus(payload, 16)
    except frame.MalformedLength:
        return  # a cut can expose a garbage length; not a conservation case
    consumed = sum(a.total_len() for a in parsed)
    assert consumed + trailing == len(payload)
