"""Binary frame codec for the host/coordinator relay protocol.

Wire layout, big-endian:

    frame_type: 1 byte   | stream_id: 4 bytes | length: 4 bytes | payload

Stream id 0 is reserved for control traffic (HELLO, WELCOME, PING, PONG);
per-request relay streams use ids > 0 issued by the coordinator.  Payloads
are capped at 65536 bytes; larger transfers are split across DATA frames.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterator

OPEN = 0x01
DATA = 0x02
CLOSE = 0x03
PING = 0x04
PONG = 0x05
HELLO = 0x06
WELCOME = 0x07

FRAME_TYPES = (OPEN, DATA, CLOSE, PING, PONG, HELLO, WELCOME)
_CONTROL_TYPES = (PING, PONG, HELLO, WELCOME)
_STREAM_TYPES = (OPEN, DATA, CLOSE)

MAX_PAYLOAD = 65536
HEADER = struct.Struct("!BII")
HEADER_SIZE = HEADER.size  # 9

_NAMES = {
    OPEN: "OPEN",
    DATA: "DATA",
    CLOSE: "CLOSE",
    PING: "PING",
    PONG: "PONG",
    HELLO: "HELLO",
    WELCOME: "WELCOME",
}


class FramingError(Exception):
    """Base class for codec failures."""


class OversizePayload(FramingError):
    """Payload exceeds the 65536-byte frame cap."""


class UnknownFrameType(FramingError):
    """The frame_type byte is not one of the defined types."""


class InvariantViolation(FramingError):
    """A structurally valid frame breaks a protocol invariant."""


@dataclass(frozen=True)
class TunnelFrame:
    frame_type: int
    stream_id: int = 0
    payload: bytes = b""

    @property
    def name(self) -> str:
        return _NAMES.get(self.frame_type, hex(self.frame_type))


def _check(frame: TunnelFrame) -> None:
    if frame.frame_type not in FRAME_TYPES:
        raise UnknownFrameType(f"unknown frame type 0x{frame.frame_type:02x}")
    if len(frame.payload) > MAX_PAYLOAD:
        raise OversizePayload(
            f"payload of {len(frame.payload)} bytes exceeds {MAX_PAYLOAD}"
        )
    if not 0 <= frame.stream_id <= 0xFFFFFFFF:
        raise InvariantViolation(f"stream id {frame.stream_id} is not a u32")
    if frame.frame_type in _CONTROL_TYPES and frame.stream_id != 0:
        raise InvariantViolation(
            f"{frame.name} must carry stream id 0, got {frame.stream_id}"
        )
    if frame.frame_type in _STREAM_TYPES and frame.stream_id == 0:
        raise InvariantViolation(f"{frame.name} may not use reserved stream id 0")
    if frame.frame_type == OPEN and frame.payload:
        raise InvariantViolation("OPEN payload must be empty")


def frame_encode(frame: TunnelFrame) -> bytes:
    """Encode one frame; exactly 9 + len(payload) bytes."""
    _check(frame)
    return HEADER.pack(frame.frame_type, frame.stream_id, len(frame.payload)) + frame.payload


def frame_decode(buf: bytes | bytearray | memoryview) -> tuple[TunnelFrame, int] | None:
    """Decode one frame from the front of ``buf``.

    Returns ``(frame, consumed_bytes)``, or ``None`` when more bytes are
    needed.  Header problems are rejected as soon as the header is
    complete, without waiting for the payload.
    """
    if len(buf) < HEADER_SIZE:
        return None
    frame_type, stream_id, length = HEADER.unpack_from(buf)
    if frame_type not in FRAME_TYPES:
        raise UnknownFrameType(f"unknown frame type 0x{frame_type:02x}")
    if length > MAX_PAYLOAD:
        raise OversizePayload(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    total = HEADER_SIZE + length
    if len(buf) < total:
        return None
    frame = TunnelFrame(
        frame_type=frame_type,
        stream_id=stream_id,
        payload=bytes(buf[HEADER_SIZE:total]),
    )
    _check(frame)
    return frame, total


class FrameReader:
    """Incremental decoder: feed arbitrary byte chunks, take whole frames."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[TunnelFrame]:
        self._buf += data
        frames: list[TunnelFrame] = []
        while True:
            decoded = frame_decode(self._buf)
            if decoded is None:
                return frames
            frame, consumed = decoded
            del self._buf[:consumed]
            frames.append(frame)

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def data_frames(stream_id: int, payload: bytes) -> Iterator[TunnelFrame]:
    """Split a byte string into DATA frames within the payload cap."""
    if not payload:
        return
    for offset in range(0, len(payload), MAX_PAYLOAD):
        yield TunnelFrame(DATA, stream_id, payload[offset : offset + MAX_PAYLOAD])


def hello_frame(token: str | None = None) -> TunnelFrame:
    doc: dict = {"proto": 1}
    if token is not None:
        doc["token"] = token
    return TunnelFrame(HELLO, 0, json.dumps(doc).encode("utf-8"))


def welcome_frame(url: str, token: str) -> TunnelFrame:
    return TunnelFrame(WELCOME, 0, json.dumps({"url": url, "token": token}).encode("utf-8"))
