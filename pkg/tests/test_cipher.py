import random

import pytest
from hypothesis import given, strategies as st

from modshield import cipher

from reference import ref_chacha20_block, ref_keystream

RFC_KEY = bytes(range(32))
RFC_NONCE = bytes.fromhex("000000090000004a00000000")
# Published block-1 keystream for the key/nonce above.
RFC_BLOCK_1 = bytes.fromhex(
    "10f1e7e4d13b5915500fdd1fa32071c4"
    "c7d1f4c733c068030422aa9ac3d46c4e"
    "d2826446079faa0914c2d705d98b02a2"
    "b5129cd1de164eb9cbd083e8a2503c4e")


def test_reference_oracle_matches_rfc_vector():
    # The oracle is validated against the published vector before it is
    # trusted to judge the production implementation.
    assert ref_chacha20_block(RFC_KEY, 1, RFC_NONCE) == RFC_BLOCK_1


def test_block_matches_rfc_vector():
    assert cipher.chacha20_block(RFC_KEY, 1, RFC_NONCE) == RFC_BLOCK_1


def test_keystream_block_zero_matches_reference():
    key = cipher.FlowCryptoKey(RFC_KEY)
    assert cipher.keystream(key, RFC_NONCE, 0, 64) == \
        ref_keystream(RFC_KEY, RFC_NONCE, 0, 64)


def test_keystream_splitting_consistency():
    key = cipher.FlowCryptoKey(RFC_KEY)
    whole = cipher.keystream(key, RFC_NONCE, 0, 64)
    assert cipher.keystream(key, RFC_NONCE, 0, 32) + \
        cipher.keystream(key, RFC_NONCE, 32, 32) == whole


def test_distinct_nonces_diverge():
    key = cipher.FlowCryptoKey(RFC_KEY)
    n1 = cipher.build_nonce(cipher.NonceInput(0, 1, 100))
    n2 = cipher.build_nonce(cipher.NonceInput(0, 1, 101))
    assert cipher.keystream(key, n1, 0, 16) != cipher.keystream(key, n2, 0, 16)
    assert ref_keystream(RFC_KEY, n1, 0, 16) != ref_keystream(RFC_KEY, n2, 0, 16)


def test_random_tuples_match_reference():
    rng = random.Random(0xC0FFEE)
    for _ in range(500):
        key = bytes(rng.randrange(256) for _ in range(32))
        nonce = bytes(rng.randrange(256) for _ in range(12))
        offset = rng.randrange(0, 300)
        length = rng.randrange(0, 150)
        assert cipher.keystream(cipher.FlowCryptoKey(key), nonce, offset, length) \
            == ref_keystream(key, nonce, offset, length)


def test_nonce_layout_examples():
    assert cipher.build_nonce(cipher.NonceInput(0, 1, 0)) == \
        bytes.fromhex("000000000001000000000000")
    assert cipher.build_nonce(cipher.NonceInput(1, 0xFFFF, 0xDEADBEEF)) == \
        bytes.fromhex("01000000FFFFDEADBEEF0000")


@given(st.integers(0, 1), st.integers(0, 0xFFFF), st.integers(0, 0xFFFFFFFF),
       st.integers(0, 1), st.integers(0, 0xFFFF), st.integers(0, 0xFFFFFFFF))
def test_nonce_injectivity(d1, t1, s1, d2, t2, s2):
    n1 = cipher.build_nonce(cipher.NonceInput(d1, t1, s1))
    n2 = cipher.build_nonce(cipher.NonceInput(d2, t2, s2))
    assert (n1 == n2) == ((d1, t1, s1) == (d2, t2, s2))


def test_transform_involution():
    key = cipher.FlowCryptoKey(RFC_KEY)
    nonce = cipher.build_nonce(cipher.NonceInput(0, 7, 4242))
    pdu = bytes(range(100))
    once = cipher.transform_pdu(key, nonce, pdu)
    assert once != pdu
    assert cipher.transform_pdu(key, nonce, once) == pdu


def test_transform_zero_pdu_is_keystream():
    key = cipher.FlowCryptoKey(RFC_KEY)
    nonce = cipher.build_nonce(cipher.NonceInput(1, 2, 3))
    assert cipher.transform_pdu(key, nonce, bytes(40)) == \
        cipher.keystream(key, nonce, 0, 40)


def test_transform_split_equals_one_shot():
    key = cipher.FlowCryptoKey(RFC_KEY)
    nonce = cipher.build_nonce(cipher.NonceInput(0, 9, 555))
    pdu = bytes(range(30))
    one_shot = cipher.transform_pdu(key, nonce, pdu)
    split = cipher.transform_pdu(key, nonce, pdu[:5], 0) + \
        cipher.transform_pdu(key, nonce, pdu[5:], 5)
    assert split == one_shot


def test_key_length_enforced():
    with pytest.raises(ValueError):
        cipher.FlowCryptoKey(b"short")


def test_zero_key_requires_insecure_flag():
    with pytest.raises(ValueError):
        cipher.FlowCryptoKey(bytes(32))
    cipher.FlowCryptoKey(bytes(32), insecure_test_key=True)
