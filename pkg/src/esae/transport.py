"""TCP transport for the ESAE endpoints.

Records on the stream are ``u32be length || body``.  The sender (client)
sends one WireFrame per record and waits for the receiver's reply before
sending the next one: an empty record acknowledges the frame, a 12-byte
``"ESRK" || u64be(new_index)`` record asks for a resync.  Closing the
stream ends the session.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Iterable

from .channel import LOSSLESS, ChannelParams
from .errors import ProtocolError
from .keychain import KdfParams
from .protocol import (ResyncPolicy, ResyncRequest, SeededKeyProvider,
                       SessionTrace, StepRecord, _resolve_source, apply_resync, make_endpoint,
                       receiver_step, sender_step)
from .sakp import FrameDetections, SakpConfig
from .scene import SceneConfig

log = logging.getLogger(__name__)

LENGTH = struct.Struct(">I")
MAX_RECORD = 1 << 24


def send_record(sock: socket.socket, body: bytes) -> None:
    sock.sendall(LENGTH.pack(len(body)) + body)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise ConnectionError(f"stream closed mid-record ({len(buf)}/{n} bytes)")
            return None
        buf += chunk
    return bytes(buf)


def recv_record(sock: socket.socket) -> bytes | None:
    """Next record body, or None on a clean close between records."""
    head = _recv_exact(sock, LENGTH.size)
    if head is None:
        return None
    (n,) = LENGTH.unpack(head)
    if n > MAX_RECORD:
        raise ProtocolError(f"record of {n} bytes exceeds limit")
    if n == 0:
        return b""
    body = _recv_exact(sock, n)
    if body is None:
        raise ConnectionError("stream closed after record header")
    return body


@dataclass
class EndpointLog:
    """One endpoint's view of a session; keys are kept in memory only."""

    entries: list[dict] = field(default_factory=list)
    aborted: bool = False
    error: Exception | None = None


def open_listener(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(1)
    return sock


def serve(listener: socket.socket | tuple[str, int], cfg: SakpConfig = SakpConfig(),
          kdf: KdfParams = KdfParams(), channel: ChannelParams = LOSSLESS,
          policy: str = "none", seed: int = 0) -> EndpointLog:
    """Run the receiver for one connection and return its log."""
    if isinstance(listener, tuple):
        listener = open_listener(*listener)
    provider = SeededKeyProvider(seed)
    state = make_endpoint("receiver", provider.next_shared_key(), cfg, kdf, ResyncPolicy(policy, provider))
    out = EndpointLog()
    conn, peer = listener.accept()
    log.info("receiver: connection from %s", peer)
    with conn:
        try:
            while True:
                wire = recv_record(conn)
                if wire is None:
                    break
                key = state.keychain.current
                result, state = receiver_step(state, wire, channel)
                if isinstance(result, ResyncRequest):
                    send_record(conn, result.encode())
                    out.entries.append(dict(session_index=result.failed_index, key=key.key_bytes,
                                            auth_ok=False, receiver_digest=None, resync=True))
                else:
                    send_record(conn, b"")
                    out.entries.append(dict(session_index=result.session_index, key=key.key_bytes,
                                            auth_ok=result.auth_ok,
                                            receiver_digest=result.digest.decode(), resync=False))
        except (ProtocolError, ConnectionError) as exc:
            log.warning("receiver: aborting session: %s", exc)
            out.aborted, out.error = True, exc
    return out


def connect(addr: tuple[str, int], frames: Iterable[FrameDetections], cfg: SakpConfig = SakpConfig(),
            kdf: KdfParams = KdfParams(), policy: str = "none", seed: int = 0) -> EndpointLog:
    """Run the sender over a fresh connection to ``addr`` and return its log."""
    provider = SeededKeyProvider(seed)
    state = make_endpoint("sender", provider.next_shared_key(), cfg, kdf, ResyncPolicy(policy, provider))
    out = EndpointLog()
    with socket.create_connection(addr) as sock:
        try:
            for frame in frames:
                key = state.keychain.current
                wire, state = sender_step(state, frame)
                send_record(sock, wire)
                reply = recv_record(sock)
                if reply is None:
                    raise ConnectionError("receiver closed the stream")
                out.entries.append(dict(frame_index=frame.frame_index, session_index=key.session_index,
                                        key=key.key_bytes, sender_digest=state.last_digest.decode()))
                if reply:
                    apply_resync(state, ResyncRequest.decode(reply))
        except (ProtocolError, ConnectionError) as exc:
            log.warning("sender: aborting session: %s", exc)
            out.aborted, out.error = True, exc
    return out


def merge_logs(sender: EndpointLog, receiver: EndpointLog) -> SessionTrace:
    trace = SessionTrace(aborted=sender.aborted or receiver.aborted)
    for step, (s, r) in enumerate(zip(sender.entries, receiver.entries), 1):
        trace.steps.append(StepRecord(
            step=step, frame_index=s["frame_index"], session_index=s["session_index"],
            key_match=s["key"] == r["key"], auth_ok=r["auth_ok"],
            sender_digest=s["sender_digest"], receiver_digest=r["receiver_digest"],
            resync=r["resync"],
        ))
    return trace


def run_tcp_session(n_frames: int, source: Iterable[FrameDetections] | None = None,
                    channel: ChannelParams = LOSSLESS, cfg: SakpConfig = SakpConfig(),
                    kdf: KdfParams = KdfParams(), policy: str = "none", seed: int = 0,
                    scene: SceneConfig | None = None, host: str = "127.0.0.1") -> SessionTrace:
    """Loopback counterpart of :func:`esae.protocol.run_session`."""
    scene = scene or SceneConfig(num_classes=cfg.num_classes)
    listener = open_listener(host, 0)
    result: dict = {}

    def _receiver():
        result["log"] = serve(listener, cfg, kdf, channel, policy, seed)

    t = threading.Thread(target=_receiver, name="esae-receiver")
    t.start()
    try:
        frames = _resolve_source(source, n_frames, seed, scene)
        sender_log = connect(listener.getsockname(), (f for _, f in zip(range(n_frames), frames)),
                             cfg, kdf, policy, seed)
    finally:
        t.join()
        listener.close()
    return merge_logs(sender_log, result["log"])
