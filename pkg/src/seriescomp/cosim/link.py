"""Simulator side of the lock-step link.

Simulated time does not advance until the controller's reply for the
current step arrives; the reply acts one step later, exactly like an
in-process device.
"""
from __future__ import annotations

import enum
import os
import socket
import subprocess
import sys
from dataclasses import dataclass

from ..device import NS_PER_S, DeviceState
from .controller import REPLY_CHANNELS_PER_PHASE, apply_reply, controller_config, encode_request
from .protocol import CosimFrame, FrameError, FrameKind, VERSION, encode_frame, read_frame


class LinkError(RuntimeError):
    def __init__(self, message: str, source: str = "cosim"):
        super().__init__(message)
        self.source = source


class LinkTimeout(LinkError):
    pass


class LinkClosed(LinkError):
    """The controller said Bye."""


class ProtocolError(LinkError):
    pass


class LinkStatus(str, enum.Enum):
    HANDSHAKING = "handshaking"
    RUNNING = "running"
    CLOSED = "closed"
    FAULTED = "faulted"


@dataclass
class LinkState:
    session_id: str
    timeout_ms: float = 1000.0
    last_seq_sent: int = -1
    last_seq_received: int = -1
    status: LinkStatus = LinkStatus.HANDSHAKING


class CosimLink:
    """Framed request/reply over a connected stream socket."""

    def __init__(self, sock: socket.socket, session_id: str = "cosim", timeout_ms: float = 1000.0):
        self.sock = sock
        self.state = LinkState(session_id, timeout_ms)
        sock.settimeout(timeout_ms / 1000.0)
        self._buf = bytearray()

    def _recv_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                self.state.status = LinkStatus.FAULTED
                raise LinkTimeout(f"no reply within {self.state.timeout_ms:g} ms", self.state.session_id) from None
            except OSError as exc:
                self.state.status = LinkStatus.FAULTED
                raise LinkError(f"transport error: {exc}", self.state.session_id) from exc
            if not chunk:
                self.state.status = LinkStatus.FAULTED
                raise LinkError("connection closed by peer", self.state.session_id)
            self._buf += chunk
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def send(self, frame: CosimFrame) -> None:
        if frame.seq <= self.state.last_seq_sent and frame.kind is not FrameKind.BYE:
            raise ProtocolError("sequence numbers must increase", self.state.session_id)
        try:
            self.sock.sendall(encode_frame(frame))
        except OSError as exc:
            self.state.status = LinkStatus.FAULTED
            raise LinkError(f"transport error: {exc}", self.state.session_id) from exc
        self.state.last_seq_sent = max(self.state.last_seq_sent, frame.seq)

    def receive(self) -> CosimFrame:
        try:
            frame = read_frame(self._recv_exact)
        except FrameError as exc:
            self.state.status = LinkStatus.FAULTED
            raise ProtocolError(f"bad frame: {exc}", self.state.session_id) from exc
        self.state.last_seq_received = frame.seq
        return frame

    def handshake(self, n_channels: int, dt_ns: int) -> None:
        hello = CosimFrame(FrameKind.HELLO, 0, dt_ns, tuple(complex(k, 0) for k in range(n_channels)))
        self.send(hello)
        reply = self.receive()
        if reply.kind is not FrameKind.HELLO:
            self.state.status = LinkStatus.FAULTED
            raise ProtocolError(f"expected Hello, got {reply.kind.name}", self.state.session_id)
        if reply.version != VERSION or len(reply.channels) != n_channels:
            self.state.status = LinkStatus.FAULTED
            raise ProtocolError("Hello mismatch", self.state.session_id)
        self.state.status = LinkStatus.RUNNING

    def close(self) -> None:
        if self.state.status is LinkStatus.RUNNING:
            try:
                self.sock.sendall(encode_frame(CosimFrame(FrameKind.BYE, self.state.last_seq_sent + 1, 0)))
            except OSError:
                pass
        if self.state.status is not LinkStatus.FAULTED:
            self.state.status = LinkStatus.CLOSED
        self.sock.close()


def lockstep_exchange(link: CosimLink, t_ns: int, samples: list[complex]) -> tuple[complex, ...]:
    """Send one SampleRequest and block for the matching CommandReply."""
    if link.state.status is not LinkStatus.RUNNING:
        raise ProtocolError(f"link is {link.state.status.value}", link.state.session_id)
    seq = link.state.last_seq_sent + 1
    link.send(CosimFrame(FrameKind.SAMPLE_REQUEST, seq, t_ns, tuple(samples)))
    reply = link.receive()
    if reply.kind is FrameKind.BYE:
        link.state.status = LinkStatus.CLOSED
        raise LinkClosed("controller closed the session", link.state.session_id)
    if reply.kind is FrameKind.FAULT:
        link.state.status = LinkStatus.FAULTED
        raise LinkError("controller reported a fault", link.state.session_id)
    if reply.kind is not FrameKind.COMMAND_REPLY:
        link.state.status = LinkStatus.FAULTED
        raise ProtocolError(f"unexpected {reply.kind.name} frame", link.state.session_id)
    if reply.seq != seq:
        link.state.status = LinkStatus.FAULTED
        raise ProtocolError(f"reply seq {reply.seq} != request seq {seq}", link.state.session_id)
    return reply.channels


class RemoteDevices:
    """Device index 0 of every phase, stepped by an external controller."""

    def __init__(self, link: CosimLink, process: subprocess.Popen | None = None):
        self.link = link
        self.process = process

    def exchange(self, t_now, currents, backup_lor, ipb, cmd, protection, states) -> tuple[DeviceState, ...]:
        t_ns = round(t_now * NS_PER_S)
        reply = lockstep_exchange(self.link, t_ns, encode_request(currents, backup_lor, ipb, cmd, protection))
        if len(reply) != 3 * REPLY_CHANNELS_PER_PHASE:
            self.link.state.status = LinkStatus.FAULTED
            raise ProtocolError(f"reply carries {len(reply)} channels", self.link.state.session_id)
        return tuple(apply_reply(states[p], reply[2 * p], reply[2 * p + 1]) for p in range(3))

    def close(self) -> None:
        self.link.close()
        if self.process is not None:
            try:
                self.process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.process.kill()
                self.process.wait()


def spawn_controller(cfg, dt_ns: int, timeout_ms: float = 1000.0, fail: str | None = None) -> RemoteDevices:
    """Start a controller process for one deployment and complete the handshake."""
    ours, theirs = socket.socketpair()
    config = controller_config(cfg.rating, cfg.protection, cfg.tracker, fail=fail)
    proc = subprocess.Popen(
        [sys.executable, "-m", "seriescomp.cosim", "--fd", str(theirs.fileno()), "--config", config],
        pass_fds=(theirs.fileno(),),
        env={**os.environ},
    )
    theirs.close()
    link = CosimLink(ours, session_id=f"{cfg.id}:hil", timeout_ms=timeout_ms)
    # process start-up is not part of the per-step budget
    ours.settimeout(max(timeout_ms, 30000.0) / 1000.0)
    link.handshake(3, dt_ns)
    ours.settimeout(timeout_ms / 1000.0)
    return RemoteDevices(link, proc)


def default_hil_factory(timeout_ms: float = 1000.0, fail: str | None = None):
    def factory(cfg, spec):
        return spawn_controller(cfg, round(spec.dt_s * NS_PER_S), timeout_ms, fail)

    return factory
