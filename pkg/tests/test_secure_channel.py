import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esae.errors import BadMagicError, FormatError, InputDomainError, TruncationError, UnknownVersionError
from esae.keychain import SessionKey
from esae.secure_channel import (HEADER_LEN, AuthFailure, EncryptedFrame, decode_wire, decrypt_payload,
                                 encode_wire, encrypt_payload, nonce_for)

keys = st.builds(SessionKey, st.binary(min_size=16, max_size=16), st.integers(0, 2**64 - 1))
payloads = st.binary(min_size=1, max_size=512)


def test_wire_hex_example():
    key = SessionKey(bytes(range(16)), 1)
    wire = encode_wire(encrypt_payload(b"hi", key))
    assert wire[:17].hex() == "45534145" "01" "0000000000000001" "00000012"
    assert len(wire) == 17 + 2 + 16


@settings(max_examples=200)
@given(payloads, keys)
def test_roundtrip(payload, key):
    frame = encrypt_payload(payload, key)
    assert frame.nonce == nonce_for(key.session_index)
    assert len(frame.ciphertext_and_tag) == len(payload) + 16
    assert decrypt_payload(decode_wire(encode_wire(frame)), key) == payload
    assert decode_wire(encode_wire(frame)) == frame


@settings(max_examples=100)
@given(payloads, keys, keys)
def test_wrong_key_rejected(payload, k1, k2):
    k2 = SessionKey(k2.key_bytes, k1.session_index)
    if k1.key_bytes == k2.key_bytes:
        return
    with pytest.raises(AuthFailure):
        decrypt_payload(encrypt_payload(payload, k1), k2)


@settings(max_examples=100)
@given(payloads, keys, st.data())
def test_bit_flip_rejected(payload, key, data):
    frame = encrypt_payload(payload, key)
    ct = bytearray(frame.ciphertext_and_tag)
    bit = data.draw(st.integers(0, len(ct) * 8 - 1))
    ct[bit // 8] ^= 1 << (bit % 8)
    with pytest.raises(AuthFailure):
        decrypt_payload(EncryptedFrame(frame.session_index, frame.nonce, bytes(ct)), key)


def test_associated_data_binds_index():
    key = SessionKey(bytes(16), 5)
    frame = encrypt_payload(b"payload", key)
    moved = EncryptedFrame(6, nonce_for(6), frame.ciphertext_and_tag)
    with pytest.raises(AuthFailure):
        decrypt_payload(moved, SessionKey(bytes(16), 6))


def test_truncated_tag_is_format_error():
    key = SessionKey(bytes(16), 1)
    frame = encrypt_payload(b"x", key)
    short = EncryptedFrame(1, frame.nonce, frame.ciphertext_and_tag[:10])
    with pytest.raises(FormatError):
        decrypt_payload(short, key)
    with pytest.raises(FormatError):
        decrypt_payload(EncryptedFrame(1, bytes(12), frame.ciphertext_and_tag), key)


def test_payload_bounds():
    with pytest.raises(InputDomainError):
        encrypt_payload(b"", SessionKey(bytes(16), 1))


def test_decode_errors():
    wire = encode_wire(encrypt_payload(b"abc", SessionKey(bytes(16), 3)))
    with pytest.raises(BadMagicError):
        decode_wire(b"X" + wire[1:])
    with pytest.raises(UnknownVersionError):
        decode_wire(wire[:4] + b"\x02" + wire[5:])
    longer = wire[:13] + (len(wire) - HEADER_LEN + 5).to_bytes(4, "big") + wire[17:]
    with pytest.raises(TruncationError):
        decode_wire(longer)
    with pytest.raises(FormatError):
        decode_wire(wire + b"\x00")


@settings(max_examples=100)
@given(payloads, keys, st.data())
def test_strict_prefix_never_decodes(payload, key, data):
    wire = encode_wire(encrypt_payload(payload, key))
    cut = data.draw(st.integers(0, len(wire) - 1))
    with pytest.raises(FormatError):
        decode_wire(wire[:cut])


def test_readme_wire_example():
    key = SessionKey(bytes(range(16)), 1)
    wire = encode_wire(encrypt_payload(b'{"frame":0,"dets":[]}', key))
    assert wire.hex() == ("45534145" "01" "0000000000000001" "00000025"
                          "c1f7c911ac84af0c747468de47c07a57fe8d32668a"
                          "67ba59530b35101982de0609bb8018da")

