"""Binary frame format for the lock-step controller link.

Layout (little-endian)::

    magic    4s   b"CSL1"
    version  u8   1
    kind     u8   FrameKind
    seq      u32
    t_ns     u64  simulated time
    n        u16  channel count
    channels n * (f64 re, f64 im)
    crc32    u32  over every preceding byte
"""
from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass

MAGIC = b"CSL1"
VERSION = 1

_HEADER = struct.Struct("<4sBBIQH")
_CRC = struct.Struct("<I")
HEADER_SIZE = _HEADER.size
MAX_CHANNELS = 0xFFFF


class FrameKind(enum.IntEnum):
    SAMPLE_REQUEST = 1
    COMMAND_REPLY = 2
    HELLO = 3
    BYE = 4
    FAULT = 5


class FrameError(ValueError):
    """Malformed frame; ``field`` names the check that failed."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class CosimFrame:
    kind: FrameKind
    seq: int
    t_ns: int
    channels: tuple[complex, ...] = ()
    version: int = VERSION


def frame_size(n_channels: int) -> int:
    return HEADER_SIZE + 16 * n_channels + _CRC.size


def encode_frame(frame: CosimFrame) -> bytes:
    if not 0 <= frame.seq < 2**32:
        raise FrameError("seq", "out of u32 range")
    if not 0 <= frame.t_ns < 2**64:
        raise FrameError("t_ns", "out of u64 range")
    if len(frame.channels) > MAX_CHANNELS:
        raise FrameError("n_channels", "too many channels")
    if not 0 <= frame.version < 256:
        raise FrameError("version", "out of u8 range")
    n = len(frame.channels)
    head = _HEADER.pack(MAGIC, frame.version, int(frame.kind), frame.seq, frame.t_ns, n)
    flat = [x for c in frame.channels for x in (c.real, c.imag)]
    body = head + struct.pack(f"<{2 * n}d", *flat)
    return body + _CRC.pack(zlib.crc32(body))


def parse_header(head: bytes) -> tuple[int, int, int, int, int]:
    """Validate a header and return ``(version, kind, seq, t_ns, n_channels)``."""
    if len(head) < HEADER_SIZE:
        raise FrameError("length", f"need {HEADER_SIZE} header bytes, got {len(head)}")
    magic, version, kind, seq, t_ns, n = _HEADER.unpack_from(head)
    if magic != MAGIC:
        raise FrameError("magic", f"expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise FrameError("version", f"unsupported version {version}")
    if kind not in FrameKind._value2member_map_:
        raise FrameError("kind", f"unknown frame kind {kind}")
    return version, kind, seq, t_ns, n


def decode_frame(data: bytes) -> CosimFrame:
    version, kind, seq, t_ns, n = parse_header(data)
    expected = frame_size(n)
    if len(data) != expected:
        raise FrameError("length", f"expected {expected} bytes for {n} channels, got {len(data)}")
    (crc,) = _CRC.unpack_from(data, expected - _CRC.size)
    if zlib.crc32(data[: expected - _CRC.size]) != crc:
        raise FrameError("crc32", "checksum mismatch")
    flat = struct.unpack_from(f"<{2 * n}d", data, HEADER_SIZE)
    channels = tuple(complex(flat[2 * k], flat[2 * k + 1]) for k in range(n))
    return CosimFrame(FrameKind(kind), seq, t_ns, channels, version)


def read_frame(recv_exact) -> CosimFrame:
    """Read one frame using ``recv_exact(n) -> bytes``."""
    head = recv_exact(HEADER_SIZE)
    *_, n = parse_header(head)
    rest = recv_exact(frame_size(n) - HEADER_SIZE)
    return decode_frame(head + rest)
