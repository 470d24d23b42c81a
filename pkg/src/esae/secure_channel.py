"""AES-128-GCM encryption of semantic payloads and the ESAE wire format.

Wire layout (all integers big-endian)::

    offset  size    field
    0       4       magic "ESAE"
    4       1       version 0x01
    5       8       session_index
    13      4       ct_len
    17      ct_len  ciphertext || 16-byte GCM tag

The 13-byte header prefix (magic, version, index) is the GCM associated
data, and the nonce is ``00000000 || u64be(session_index)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import BadMagicError, FormatError, InputDomainError, TruncationError, UnknownVersionError
from .keychain import KEY_LEN, SessionKey

MAGIC = b"ESAE"
VERSION = 1
TAG_LEN = 16
NONCE_LEN = 12
HEADER = struct.Struct(">4sBQI")
HEADER_LEN = HEADER.size  # 17
MAX_PAYLOAD = 2**32 - 1 - TAG_LEN


class AuthFailure(Exception):
    """Tag verification failed: wrong key, wrong index, or tampered ciphertext.

    This is an expected outcome of decryption, not a malformed input.
    """


def nonce_for(session_index: int) -> bytes:
    return b"\x00" * 4 + session_index.to_bytes(8, "big")


def associated_data(session_index: int) -> bytes:
    return MAGIC + bytes([VERSION]) + session_index.to_bytes(8, "big")


@dataclass(frozen=True)
class EncryptedFrame:
    session_index: int
    nonce: bytes
    ciphertext_and_tag: bytes

    def validate(self) -> None:
        if not 0 <= self.session_index < 2**64:
            raise FormatError(f"session_index {self.session_index} out of range")
        if self.nonce != nonce_for(self.session_index):
            raise FormatError("nonce does not match session index")
        if len(self.ciphertext_and_tag) < TAG_LEN + 1:
            raise TruncationError("ciphertext shorter than tag plus one byte")


def encrypt_payload(payload: bytes, key: SessionKey) -> EncryptedFrame:
    if not 1 <= len(payload) <= MAX_PAYLOAD:
        raise InputDomainError(f"payload length {len(payload)} outside [1, {MAX_PAYLOAD}]")
    if len(key.key_bytes) != KEY_LEN:
        raise InputDomainError("AES-128 needs a 16-byte key")
    idx = key.session_index
    nonce = nonce_for(idx)
    ct = AESGCM(key.key_bytes).encrypt(nonce, bytes(payload), associated_data(idx))
    return EncryptedFrame(idx, nonce, ct)


def decrypt_payload(frame: EncryptedFrame, key: SessionKey) -> bytes:
    """Decrypt ``frame``; raises :class:`AuthFailure` on a key or AD mismatch."""
    frame.validate()
    try:
        return AESGCM(key.key_bytes).decrypt(frame.nonce, frame.ciphertext_and_tag,
                                             associated_data(frame.session_index))
    except InvalidTag:
        raise AuthFailure(f"authentication failed for session {frame.session_index}") from None


def encode_wire(frame: EncryptedFrame) -> bytes:
    frame.validate()
    return HEADER.pack(MAGIC, VERSION, frame.session_index, len(frame.ciphertext_and_tag)) \
        + frame.ciphertext_and_tag


def decode_wire(data: bytes) -> EncryptedFrame:
    if len(data) < 4:
        raise TruncationError("shorter than magic")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < HEADER_LEN:
        raise TruncationError(f"header needs {HEADER_LEN} bytes, got {len(data)}")
    _, version, index, ct_len = HEADER.unpack_from(data)
    if version != VERSION:
        raise UnknownVersionError(f"unknown wire version {version}")
    body = data[HEADER_LEN:]
    if len(body) < ct_len:
        raise TruncationError(f"declared {ct_len} ciphertext bytes, {len(body)} present")
    if len(body) > ct_len:
        raise FormatError(f"{len(body) - ct_len} trailing bytes after frame")
    frame = EncryptedFrame(index, nonce_for(index), bytes(body))
    frame.validate()
    return frame
