"""Sender and receiver state machines for the ESAE loop.

One step of the loop::

    sender:   encrypt(serialize(s_j), k_j^S) -> wire;  k_{j+1}^S = G(window + digest(s_j))
    receiver: decrypt(wire, k_j^R) -> s_j;  s^_j = distort(s_j);  k_{j+1}^R = G(window + digest(s^_j))

Keys are never transmitted.  When the receiver's key has drifted the GCM tag
fails, and the resync policy decides what happens next.
"""

from __future__ import annotations

import json
import secrets
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator, Literal

import numpy as np

from .channel import LOSSLESS, ChannelParams, distort_detections, make_rng, profile_from_snr
from .errors import ConfigurationError, FormatError, InputDomainError, ProtocolError, StateError
from .keychain import KEY_LEN, KdfParams, KeychainState, init_keychain
from .sakp import FrameDetections, SakpConfig, canonical_digest, frame_from_json, frame_to_json
from .scene import SceneConfig, generate_scene
from .secure_channel import AuthFailure, decode_wire, decrypt_payload, encode_wire, encrypt_payload

AUTHFAIL_DIGEST = b"AUTHFAIL"
RESYNC_MAGIC = b"ESRK"


# -- initial key delivery ----------------------------------------------------

class InitialKeyProvider:
    """Out-of-band delivery of shared keys (stands in for the asymmetric exchange).

    Each endpoint holds its own handle from :meth:`fork`; handles forked from
    the same provider hand out the same key sequence.
    """

    def next_shared_key(self) -> bytes:
        raise NotImplementedError

    def fork(self) -> "InitialKeyProvider":
        raise NotImplementedError


class FixedKeyProvider(InitialKeyProvider):
    def __init__(self, key: bytes = bytes(KEY_LEN)):
        if len(key) != KEY_LEN:
            raise ConfigurationError(f"fixed key must be {KEY_LEN} bytes")
        self.key = bytes(key)

    def next_shared_key(self) -> bytes:
        return self.key

    def fork(self) -> "FixedKeyProvider":
        return FixedKeyProvider(self.key)


class SeededKeyProvider(InitialKeyProvider):
    def __init__(self, seed: int | None = None):
        self.seed = secrets.randbits(63) if seed is None else seed
        self._rng = make_rng((self.seed, 0x4B4559))

    def next_shared_key(self) -> bytes:
        return self._rng.bytes(KEY_LEN)

    def fork(self) -> "SeededKeyProvider":
        return SeededKeyProvider(self.seed)


@dataclass(frozen=True)
class ResyncPolicy:
    mode: Literal["none", "reinit-on-failure"] = "none"
    provider: InitialKeyProvider | None = None

    def __post_init__(self):
        if self.mode not in ("none", "reinit-on-failure"):
            raise ConfigurationError(f"unknown resync mode {self.mode!r}")
        if self.mode == "reinit-on-failure" and self.provider is None:
            raise ConfigurationError("reinit-on-failure needs a key provider")


# -- endpoint state and step results ----------------------------------------

@dataclass
class EndpointStats:
    frames_ok: int = 0
    auth_failures: int = 0
    resyncs: int = 0


@dataclass
class EndpointState:
    role: Literal["sender", "receiver"]
    keychain: KeychainState
    cfg: SakpConfig
    resync: ResyncPolicy = field(default_factory=ResyncPolicy)
    stats: EndpointStats = field(default_factory=EndpointStats)
    last_digest: bytes | None = None


@dataclass(frozen=True)
class ReconstructedFrame:
    session_index: int
    frame: FrameDetections | None
    digest: bytes
    auth_ok: bool = True


@dataclass(frozen=True)
class ResyncRequest:
    failed_index: int
    new_index: int

    def encode(self) -> bytes:
        return RESYNC_MAGIC + self.new_index.to_bytes(8, "big")

    @classmethod
    def decode(cls, data: bytes) -> "ResyncRequest":
        if len(data) != 12 or data[:4] != RESYNC_MAGIC:
            raise ProtocolError(f"malformed control message {data[:4]!r}")
        new_index = int.from_bytes(data[4:], "big")
        return cls(new_index - 1, new_index)


def make_endpoint(role, initial_key: bytes, cfg: SakpConfig, kdf: KdfParams = KdfParams(),
                  resync: ResyncPolicy = ResyncPolicy()) -> EndpointState:
    return EndpointState(role, init_keychain(initial_key, cfg, kdf), cfg, resync)


def _reinit(state: EndpointState, new_index: int) -> None:
    key = state.resync.provider.next_shared_key()
    state.keychain = init_keychain(key, state.cfg, state.keychain.kdf, start_index=new_index)
    state.stats.resyncs += 1


def sender_step(state: EndpointState, source_frame: FrameDetections) -> tuple[bytes, EndpointState]:
    if state.role != "sender":
        raise StateError("sender_step called on a receiver")
    payload = frame_to_json(source_frame).encode("utf-8")
    try:
        frame = encrypt_payload(payload, state.keychain.current)
    except InputDomainError as exc:
        raise InputDomainError(f"frame {source_frame.frame_index} cannot be sent: {exc}") from exc
    digest = canonical_digest(source_frame, state.cfg).data
    state.keychain.advance(digest)
    state.last_digest = digest
    state.stats.frames_ok += 1
    return encode_wire(frame), state


def apply_resync(state: EndpointState, request: ResyncRequest) -> EndpointState:
    """Sender side of a resync: adopt the next provider key at ``request.new_index``."""
    if state.resync.mode != "reinit-on-failure":
        raise ProtocolError("peer requested a resync but the policy forbids it")
    _reinit(state, request.new_index)
    return state


def receiver_step(state: EndpointState, wire: bytes, channel: ChannelParams = LOSSLESS,
                  digest_hook: Callable[[bytes], bytes] | None = None
                  ) -> tuple[ReconstructedFrame | ResyncRequest, EndpointState]:
    """Decrypt one wire frame and update the receiver's keychain.

    ``digest_hook`` rewrites the receiver digest before it enters the
    keychain; it exists for fault injection in tests.
    """
    if state.role != "receiver":
        raise StateError("receiver_step called on a sender")
    try:
        enc = decode_wire(wire)
    except FormatError as exc:
        raise ProtocolError(f"bad wire frame: {exc}") from exc
    if enc.session_index != state.keychain.session_index:
        raise ProtocolError(f"frame index {enc.session_index} but receiver is at "
                            f"{state.keychain.session_index}")
    try:
        payload = decrypt_payload(enc, state.keychain.current)
    except AuthFailure:
        state.stats.auth_failures += 1
        if state.resync.mode == "reinit-on-failure":
            req = ResyncRequest(enc.session_index, enc.session_index + 1)
            _reinit(state, req.new_index)
            state.last_digest = None
            return req, state
        state.keychain.advance(AUTHFAIL_DIGEST)
        state.last_digest = AUTHFAIL_DIGEST
        return ReconstructedFrame(enc.session_index, None, AUTHFAIL_DIGEST, auth_ok=False), state

    try:
        source = frame_from_json(payload, state.cfg.num_classes)
    except InputDomainError as exc:
        raise ProtocolError(f"authenticated payload does not parse: {exc}") from exc
    recon = distort_detections(source, profile_from_snr(channel), (channel.seed, source.frame_index),
                               state.cfg.num_classes)
    digest = canonical_digest(recon, state.cfg).data
    if digest_hook is not None:
        digest = digest_hook(digest)
    state.keychain.advance(digest)
    state.last_digest = digest
    state.stats.frames_ok += 1
    return ReconstructedFrame(enc.session_index, recon, digest), state


def flip_last_bit(digest: bytes) -> bytes:
    return digest[:-1] + bytes([digest[-1] ^ 1])


# -- session harness ---------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    step: int
    frame_index: int
    session_index: int
    key_match: bool
    auth_ok: bool
    sender_digest: str
    receiver_digest: str | None
    resync: bool

    def to_json(self) -> str:
        return json.dumps({"type": "step", **asdict(self)}, separators=(",", ":"))


@dataclass
class SessionTrace:
    steps: list[StepRecord] = field(default_factory=list)
    aborted: bool = False

    @property
    def auth_failures(self) -> int:
        return sum(not s.auth_ok for s in self.steps)

    @property
    def resyncs(self) -> int:
        return sum(s.resync for s in self.steps)

    def key_match_rate(self, skip_first: bool = True) -> float:
        steps = self.steps[1:] if skip_first else self.steps
        return float(np.mean([s.key_match for s in steps])) if steps else float("nan")

    def to_jsonl(self, header: dict | None = None) -> str:
        lines = [json.dumps({"type": "header", **header}, separators=(",", ":"))] if header else []
        lines += [s.to_json() for s in self.steps]
        if self.aborted:
            lines.append(json.dumps({"type": "abort", "completed_steps": len(self.steps)}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "SessionTrace":
        trace = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.pop("type", "step")
            if kind == "step":
                trace.steps.append(StepRecord(**obj))
            elif kind == "abort":
                trace.aborted = True
        return trace


def _resolve_source(source, n_frames: int, seed: int, scene: SceneConfig) -> Iterator[FrameDetections]:
    if source is None:
        return generate_scene(n_frames, (seed, 1), scene)
    return iter(source)


def run_session(n_frames: int, source: Iterable[FrameDetections] | None = None,
                channel: ChannelParams = LOSSLESS, cfg: SakpConfig = SakpConfig(),
                kdf: KdfParams = KdfParams(), policy: str = "none", seed: int = 0,
                scene: SceneConfig | None = None, digest_faults: Iterable[int] = ()) -> SessionTrace:
    """Drive both endpoints over an in-process link for ``n_frames`` steps.

    The initial key and any resync keys come from a seeded provider; the
    frame source defaults to a synthetic scene seeded from ``seed``.
    ``digest_faults`` lists steps whose receiver digest is corrupted.
    """
    if n_frames < 1:
        raise InputDomainError("n_frames must be >= 1")
    scene = scene or SceneConfig(num_classes=cfg.num_classes)
    provider = SeededKeyProvider(seed)
    send_p, recv_p = provider.fork(), provider.fork()
    sender = make_endpoint("sender", send_p.next_shared_key(), cfg, kdf,
                           ResyncPolicy(policy, send_p))
    receiver = make_endpoint("receiver", recv_p.next_shared_key(), cfg, kdf,
                             ResyncPolicy(policy, recv_p))
    faults = set(digest_faults)
    trace = SessionTrace()
    frames = _resolve_source(source, n_frames, seed, scene)
    for step in range(1, n_frames + 1):
        try:
            frame = next(frames)
        except StopIteration:
            break
        k_send = sender.keychain.current
        k_recv = receiver.keychain.current
        wire, sender = sender_step(sender, frame)
        hook = flip_last_bit if step in faults else None
        result, receiver = receiver_step(receiver, wire, channel, digest_hook=hook)
        if isinstance(result, ResyncRequest):
            apply_resync(sender, result)
        trace.steps.append(StepRecord(
            step=step,
            frame_index=frame.frame_index,
            session_index=k_send.session_index,
            key_match=k_send.key_bytes == k_recv.key_bytes,
            auth_ok=isinstance(result, ReconstructedFrame) and result.auth_ok,
            sender_digest=sender.last_digest.decode(),
            receiver_digest=result.digest.decode() if isinstance(result, ReconstructedFrame) else None,
            resync=isinstance(result, ResyncRequest),
        ))
    return trace
