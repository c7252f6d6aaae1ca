"""Lock-step split-process device link."""
from .link import CosimLink, LinkClosed, LinkError, LinkState, LinkStatus, LinkTimeout, ProtocolError, lockstep_exchange
from .protocol import CosimFrame, FrameError, FrameKind, decode_frame, encode_frame

__all__ = [
    "CosimFrame", "CosimLink", "FrameError", "FrameKind", "LinkClosed", "LinkError", "LinkState",
    "LinkStatus", "LinkTimeout", "ProtocolError", "decode_frame", "encode_frame", "lockstep_exchange",
]
