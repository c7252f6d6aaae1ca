"""Out-of-process device controller speaking the lock-step protocol.

One controller serves the first device of each phase of a deployment.
Per phase the request carries three channels (line current, control
flags, command) and the reply two (injection, state).

Run as ``python -m seriescomp.cosim --fd N --config JSON``.
"""
from __future__ import annotations

import argparse
import json
import socket
import sys
import time
from dataclasses import asdict, replace

from ..device import (
    AngleTrackerSettings,
    CommandMode,
    DeviceProtectionSettings,
    DeviceRating,
    DeviceState,
    InjectionCommand,
    Mode,
    NS_PER_S,
    Polarity,
    step_device,
)
from .protocol import CosimFrame, FrameError, FrameKind, encode_frame, read_frame

REQUEST_CHANNELS_PER_PHASE = 3
REPLY_CHANNELS_PER_PHASE = 2

FLAG_BACKUP_LOR = 1
FLAG_IPB = 2
FLAG_LOR_ENABLED = 4
FLAG_OC_ENABLED = 8

STATUS_LOR_FROM_IPB = 1
STATUS_LOR_TRIGGER = 2

_CMD_CODES = {
    (CommandMode.OFF, Polarity.INDUCTIVE): 0,
    (CommandMode.OFF, Polarity.CAPACITIVE): 0,
    (CommandMode.FIXED_REACTANCE, Polarity.INDUCTIVE): 1,
    (CommandMode.FIXED_REACTANCE, Polarity.CAPACITIVE): 1,
    (CommandMode.FIXED_VOLTAGE, Polarity.INDUCTIVE): 2,
    (CommandMode.FIXED_VOLTAGE, Polarity.CAPACITIVE): 3,
}


def encode_request(currents, backup_lor: bool, ipb, cmd: InjectionCommand, protection: DeviceProtectionSettings) -> list[complex]:
    code = _CMD_CODES[(cmd.mode, cmd.polarity)]
    setpoint = cmd.x_set_ohm if cmd.mode is CommandMode.FIXED_REACTANCE else cmd.v_set_kv
    out = []
    for p in range(3):
        flags = (
            FLAG_BACKUP_LOR * bool(backup_lor)
            | FLAG_IPB * bool(ipb[p])
            | FLAG_LOR_ENABLED * protection.lor_enabled
            | FLAG_OC_ENABLED * protection.oc_enabled
        )
        out += [complex(currents[p]), complex(flags, 0.0), complex(code, setpoint)]
    return out


def decode_command(ch: complex) -> InjectionCommand:
    code = int(ch.real)
    if code == 1:
        return InjectionCommand(CommandMode.FIXED_REACTANCE, x_set_ohm=ch.imag)
    if code in (2, 3):
        pol = Polarity.INDUCTIVE if code == 2 else Polarity.CAPACITIVE
        return InjectionCommand(CommandMode.FIXED_VOLTAGE, v_set_kv=ch.imag, polarity=pol)
    return InjectionCommand(CommandMode.OFF)


def encode_reply(states: list[DeviceState], injections: list[complex]) -> list[complex]:
    out = []
    for s, v in zip(states, injections):
        status = STATUS_LOR_FROM_IPB * s.lor_from_ipb | STATUS_LOR_TRIGGER * s.lor_trigger_active
        out += [v, complex(int(s.mode), status)]
    return out


def apply_reply(prev: DeviceState, inj: complex, status_ch: complex) -> DeviceState:
    """Mirror of a remote device state, enough for coordination and tracing."""
    mode = Mode(int(status_ch.real))
    status = int(status_ch.imag)
    return prev._replace(
        mode=mode,
        vsl_closed=mode is not Mode.INJECTION and mode is not Mode.LOR_BYPASS,
        lor_from_ipb=bool(status & STATUS_LOR_FROM_IPB),
        lor_trigger_active=bool(status & STATUS_LOR_TRIGGER),
        last_injection=inj,
    )


def controller_config(rating: DeviceRating, protection: DeviceProtectionSettings, tracker: AngleTrackerSettings, **extra) -> str:
    return json.dumps({"rating": asdict(rating), "protection": asdict(protection), "tracker": asdict(tracker), **extra})


class DeviceController:
    """Holds one device state per phase and answers sample requests."""

    def __init__(self, rating: DeviceRating, protection: DeviceProtectionSettings, tracker: AngleTrackerSettings):
        self.rating = rating
        self.protection = protection
        self.tracker = tracker
        self.states = [DeviceState(phase=p) for p in range(3)]
        self.dt = None

    def hello(self, dt_ns: int) -> None:
        self.dt = dt_ns / NS_PER_S

    def handle(self, t_ns: int, channels: tuple[complex, ...]) -> list[complex]:
        t_now = t_ns / NS_PER_S
        injections = []
        for p in range(3):
            i_line, ctl, cmd_ch = channels[3 * p: 3 * p + 3]
            flags = int(ctl.real)
            protection = self.protection
            lor_on = bool(flags & FLAG_LOR_ENABLED)
            oc_on = bool(flags & FLAG_OC_ENABLED)
            if (lor_on, oc_on) != (protection.lor_enabled, protection.oc_enabled):
                protection = replace(protection, lor_enabled=lor_on, oc_enabled=oc_on)
            state, v, _ = step_device(
                self.states[p], decode_command(cmd_ch), i_line, bool(flags & FLAG_BACKUP_LOR),
                bool(flags & FLAG_IPB), t_now, self.dt, self.rating, protection, self.tracker,
            )
            self.states[p] = state
            injections.append(v)
        return encode_reply(self.states, injections)


def serve(sock: socket.socket, controller: DeviceController, fail: str | None = None) -> int:
    """Answer frames until Bye; ``fail`` injects ``bye@N`` or ``silent@N`` misbehaviour."""
    fail_kind, fail_at = (fail.split("@")[0], int(fail.split("@")[1])) if fail else (None, -1)
    buf = sock.makefile("rb")

    def recv_exact(n: int) -> bytes:
        data = buf.read(n)
        if data is None or len(data) < n:
            raise EOFError
        return data

    seq_out = 0
    last_seq_in = -1
    while True:
        try:
            frame = read_frame(recv_exact)
        except EOFError:
            return 0
        except FrameError as exc:
            sock.sendall(encode_frame(CosimFrame(FrameKind.FAULT, seq_out, 0)))
            print(f"controller: {exc}", file=sys.stderr)
            return 1
        if frame.seq <= last_seq_in and frame.kind is not FrameKind.HELLO:
            sock.sendall(encode_frame(CosimFrame(FrameKind.FAULT, frame.seq, frame.t_ns)))
            return 1
        last_seq_in = frame.seq
        if frame.kind is FrameKind.HELLO:
            controller.hello(frame.t_ns)
            sock.sendall(encode_frame(CosimFrame(FrameKind.HELLO, frame.seq, frame.t_ns, frame.channels)))
        elif frame.kind is FrameKind.BYE:
            return 0
        elif frame.kind is FrameKind.SAMPLE_REQUEST:
            if fail_kind and frame.seq >= fail_at:
                if fail_kind == "bye":
                    sock.sendall(encode_frame(CosimFrame(FrameKind.BYE, frame.seq, frame.t_ns)))
                    return 0
                time.sleep(3600)
            reply = controller.handle(frame.t_ns, frame.channels)
            sock.sendall(encode_frame(CosimFrame(FrameKind.COMMAND_REPLY, frame.seq, frame.t_ns, tuple(reply))))
        seq_out = frame.seq


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="seriescomp-controller")
    ap.add_argument("--fd", type=int, required=True, help="connected socket file descriptor")
    ap.add_argument("--config", required=True, help="JSON device configuration")
    ap.add_argument("--fail", default=None, help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    cfg = json.loads(args.config)
    controller = DeviceController(
        DeviceRating(**cfg["rating"]),
        DeviceProtectionSettings(**cfg["protection"]),
        AngleTrackerSettings(**cfg["tracker"]),
    )
    sock = socket.socket(fileno=args.fd)
    try:
        return serve(sock, controller, args.fail or cfg.get("fail"))
    finally:
        sock.close()


if __name__ == "__main__":
    sys.exit(main())
