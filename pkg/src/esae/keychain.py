"""Per-endpoint session-key chain.

Each endpoint keeps the digests of the last ``T`` communicated frames and
derives the next 128-bit session key from them with PBKDF2.  Sender and
receiver never exchange keys after the initial one; they stay in step as
long as their digest windows agree.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigurationError, StateError
from .sakp import SakpConfig, SemanticDigest

KEY_LEN = 16
DIGEST_SEPARATOR = b"\x1f"


@dataclass(frozen=True)
class SessionKey:
    key_bytes: bytes
    session_index: int

    def __post_init__(self):
        if len(self.key_bytes) != KEY_LEN:
            raise ConfigurationError(f"session key must be {KEY_LEN} bytes, got {len(self.key_bytes)}")
        if self.session_index < 0:
            raise ConfigurationError("session_index must be non-negative")

    def __repr__(self):
        # keep key material out of logs and tracebacks
        return f"SessionKey(session_index={self.session_index}, key=<{KEY_LEN} bytes>)"


@dataclass(frozen=True)
class KdfParams:
    iterations: int = 10_000
    salt_context: bytes = b"ESAE-v1"
    prf: str = "sha256"
    output_len: int = KEY_LEN

    def __post_init__(self):
        if self.iterations < 1000:
            raise ConfigurationError(f"iterations must be >= 1000, got {self.iterations}")
        if self.output_len != KEY_LEN:
            raise ConfigurationError(f"output_len must be {KEY_LEN}")
        try:
            hashlib.new(self.prf)
        except ValueError as exc:
            raise ConfigurationError(f"unknown PRF hash {self.prf!r}") from exc


def derive_session_key(history: Sequence[SemanticDigest | bytes], next_index: int,
                       kdf: KdfParams = KdfParams()) -> SessionKey:
    """PBKDF2 over the window of digests, salted with the session index."""
    if not history:
        raise StateError("cannot derive a session key from an empty history")
    password = DIGEST_SEPARATOR.join(d.data if isinstance(d, SemanticDigest) else d for d in history)
    salt = kdf.salt_context + next_index.to_bytes(8, "big")
    key = hashlib.pbkdf2_hmac(kdf.prf, password, salt, kdf.iterations, kdf.output_len)
    return SessionKey(key, next_index)


@dataclass
class KeychainState:
    """Mutable, single-owner key state of one endpoint."""

    current: SessionKey
    cfg: SakpConfig
    kdf: KdfParams = field(default_factory=KdfParams)
    history: deque = None

    def __post_init__(self):
        if self.history is None:
            self.history = deque(maxlen=self.cfg.window)

    @property
    def session_index(self) -> int:
        return self.current.session_index

    def advance(self, digest: SemanticDigest | bytes) -> SessionKey:
        self.history.append(digest)
        self.current = derive_session_key(list(self.history), self.current.session_index + 1, self.kdf)
        return self.current


def init_keychain(initial_key: bytes, cfg: SakpConfig, kdf: KdfParams = KdfParams(),
                  start_index: int = 1) -> KeychainState:
    """Fresh keychain holding the pre-shared key at ``start_index`` (1 for a new session).

    A non-default ``start_index`` is used when a running session is re-keyed
    so that nonces keep increasing.
    """
    if len(initial_key) != KEY_LEN:
        raise ConfigurationError(f"initial key must be {KEY_LEN} bytes, got {len(initial_key)}")
    return KeychainState(SessionKey(bytes(initial_key), start_index), cfg, kdf)


def advance(state: KeychainState, digest: SemanticDigest | bytes) -> KeychainState:
    state.advance(digest)
    return state
