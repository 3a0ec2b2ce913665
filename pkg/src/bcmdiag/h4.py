"""H4 serial framing codec.

One byte stream multiplexes HCI commands, events, ACL/SCO data and the
Broadcom vendor channels (diagnostics, message queue put, WICED).  The
leading octet of every frame tags the traffic type; the rest of the
layout is type specific.  Standard HCI traffic is self-delimiting via
its length fields; the vendor channels carry no length field, so they
travel in a fixed 64-octet envelope (1 type octet + 63 payload octets,
zero padded).  The envelope size is a convention of this toolkit, not
something the chip documents -- it is flagged again wherever it leaks
into files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from .errors import InvariantViolation, UnknownH4Type

# Payload octets in one fixed-size vendor-channel envelope (type octet
# excluded).  Total frame size on the wire is DIAG_FRAME_LEN.
DIAG_PAYLOAD_LEN = 63
DIAG_FRAME_LEN = 1 + DIAG_PAYLOAD_LEN


class H4Type(IntEnum):
    HCI_COMMAND = 0x01
    ACL_DATA = 0x02
    SCO_DATA = 0x03
    HCI_EVENT = 0x04
    DIAG = 0x07
    MSG_QUEUE_PUT = 0x0A
    WICED = 0x19


class Direction(IntEnum):
    """Which way a frame crossed the host/controller boundary."""

    HOST_TO_CONTROLLER = 0
    CONTROLLER_TO_HOST = 1

    @property
    def arrow(self) -> str:
        return ">>" if self is Direction.HOST_TO_CONTROLLER else "<<"


# Octets needed beyond the type tag before the payload length is known.
_HEADER_NEED = {
    H4Type.HCI_COMMAND: 3,
    H4Type.ACL_DATA: 4,
    H4Type.SCO_DATA: 3,
    H4Type.HCI_EVENT: 2,
    H4Type.DIAG: DIAG_PAYLOAD_LEN,
    H4Type.MSG_QUEUE_PUT: DIAG_PAYLOAD_LEN,
    H4Type.WICED: DIAG_PAYLOAD_LEN,
}

_VALID_TAGS = {int(t) for t in H4Type}


def payload_length(h4_type: H4Type, header: bytes) -> int:
    """Total payload length of a frame, given its first header octets."""
    if h4_type is H4Type.HCI_COMMAND:
        return 3 + header[2]
    if h4_type is H4Type.HCI_EVENT:
        return 2 + header[1]
    if h4_type is H4Type.ACL_DATA:
        return 4 + struct.unpack_from("<H", header, 2)[0]
    if h4_type is H4Type.SCO_DATA:
        return 3 + header[2]
    return DIAG_PAYLOAD_LEN


@dataclass(frozen=True)
class H4Frame:
    """One transport-framed unit crossing the host/controller boundary."""

    h4_type: H4Type
    payload: bytes

    @classmethod
    def diag(cls, body: bytes, h4_type: H4Type = H4Type.DIAG) -> "H4Frame":
        """Wrap a diagnostic (or other vendor-channel) body, zero padding
        it to the fixed envelope size."""
        if h4_type not in (H4Type.DIAG, H4Type.MSG_QUEUE_PUT, H4Type.WICED):
            raise InvariantViolation(f"{h4_type!r} is not an envelope channel")
        if len(body) > DIAG_PAYLOAD_LEN:
            raise InvariantViolation(
                f"vendor-channel body of {len(body)} octets exceeds "
                f"the {DIAG_PAYLOAD_LEN}-octet envelope"
            )
        return cls(h4_type, bytes(body).ljust(DIAG_PAYLOAD_LEN, b"\x00"))

    def validate(self) -> None:
        expected = None
        p = self.payload
        t = self.h4_type
        if t is H4Type.HCI_COMMAND:
            expected = 3 + p[2] if len(p) >= 3 else -1
        elif t is H4Type.HCI_EVENT:
            expected = 2 + p[1] if len(p) >= 2 else -1
        elif t is H4Type.ACL_DATA:
            expected = 4 + struct.unpack_from("<H", p, 2)[0] if len(p) >= 4 else -1
        elif t is H4Type.SCO_DATA:
            expected = 3 + p[2] if len(p) >= 3 else -1
        else:
            expected = DIAG_PAYLOAD_LEN
        if expected != len(p):
            raise InvariantViolation(
                f"{t.name} payload of {len(p)} octets disagrees with its "
                f"length field (expected {expected})"
            )


def encode_frame(frame: H4Frame) -> bytes:
    """Serialize one frame; the output begins with the type tag octet."""
    frame.validate()
    return bytes([frame.h4_type]) + frame.payload


def _decode(
    buf: bytes | bytearray, base_offset: int, limit: int | None = None
) -> tuple[list[H4Frame], int]:
    frames: list[H4Frame] = []
    i = 0
    n = len(buf)
    while i < n and (limit is None or len(frames) < limit):
        tag = buf[i]
        if tag not in _VALID_TAGS:
            raise UnknownH4Type(tag, base_offset + i)
        h4_type = H4Type(tag)
        need = _HEADER_NEED[h4_type]
        if n - i - 1 < need:
            break  # partial header, wait for more octets
        header = bytes(buf[i + 1 : i + 1 + need])
        total = payload_length(h4_type, header)
        if n - i - 1 < total:
            break  # partial body
        frames.append(H4Frame(h4_type, bytes(buf[i + 1 : i + 1 + total])))
        i += 1 + total
    return frames, i


def decode_stream(buffer: bytes) -> tuple[list[H4Frame], int]:
    """Decode all complete frames from ``buffer``.

    Returns the frames in order plus the number of octets consumed; a
    trailing partial frame is left unconsumed so decoding can resume
    once more octets arrive.  An octet that is not a known type tag
    raises :class:`UnknownH4Type` with its stream offset -- the stream
    is never silently resynchronized.
    """
    return _decode(buffer, 0)


def decode_one(buffer: bytes) -> tuple[H4Frame | None, int]:
    """Decode at most one frame; returns (frame or None, consumed).
    Needed where frames are interleaved with out-of-band octets."""
    frames, consumed = _decode(buffer, 0, limit=1)
    return (frames[0] if frames else None), consumed


class H4StreamDecoder:
    """Resumable decoder for a live H4 byte stream.

    Carries explicit buffer state and must be owned by exactly one
    stream consumer at a time; the pure functions above are safe for
    unrestricted concurrent use.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self._base = 0  # absolute stream offset of _buf[0]

    def feed(self, data: bytes) -> list[H4Frame]:
        """Append octets and return every newly completed frame."""
        self._buf += data
        frames, used = _decode(self._buf, self._base)
        del self._buf[:used]
        self._base += used
        return frames

    @property
    def pending(self) -> bytes:
        """Octets of the trailing partial frame, if any."""
        return bytes(self._buf)


# Direction legality per traffic type: commands only flow host to
# controller, events only controller to host, everything else both ways.
_HOST_ONLY = {H4Type.HCI_COMMAND}
_CONTROLLER_ONLY = {H4Type.HCI_EVENT}


def direction_legal(h4_type: H4Type, direction: Direction) -> bool:
    if h4_type in _HOST_ONLY:
        return direction is Direction.HOST_TO_CONTROLLER
    if h4_type in _CONTROLLER_ONLY:
        return direction is Direction.CONTROLLER_TO_HOST
    return True


def audit_direction(frame: H4Frame, direction: Direction) -> str | None:
    """Return a warning line for an illegal-direction frame, else None.

    This is an audit, not a decode failure: misdirected frames still
    parse so they can be inspected.
    """
    if direction_legal(frame.h4_type, direction):
        return None
    return (
        f"direction violation: {frame.h4_type.name} seen "
        f"{'controller->host' if direction else 'host->controller'}"
    )


@dataclass(frozen=True)
class HciCommand:
    """Host-to-controller command: 16-bit opcode (OGF/OCF packed) + params."""

    opcode: int
    params: bytes = b""

    @property
    def ogf(self) -> int:
        return self.opcode >> 10

    @property
    def ocf(self) -> int:
        return self.opcode & 0x3FF

    def to_frame(self) -> H4Frame:
        if not 0 <= self.opcode <= 0xFFFF:
            raise InvariantViolation(f"opcode 0x{self.opcode:x} out of range")
        if len(self.params) > 255:
            raise InvariantViolation("HCI command parameters exceed 255 octets")
        payload = struct.pack("<HB", self.opcode, len(self.params)) + self.params
        return H4Frame(H4Type.HCI_COMMAND, payload)

    @classmethod
    def from_frame(cls, frame: H4Frame) -> "HciCommand":
        if frame.h4_type is not H4Type.HCI_COMMAND:
            raise InvariantViolation(f"not an HCI command frame: {frame.h4_type!r}")
        frame.validate()
        opcode, _n = struct.unpack_from("<HB", frame.payload)
        return cls(opcode, frame.payload[3:])


@dataclass(frozen=True)
class HciEvent:
    """Controller-to-host event: event code + params."""

    event_code: int
    params: bytes = b""

    def to_frame(self) -> H4Frame:
        if not 0 <= self.event_code <= 0xFF:
            raise InvariantViolation(f"event code 0x{self.event_code:x} out of range")
        if len(self.params) > 255:
            raise InvariantViolation("HCI event parameters exceed 255 octets")
        payload = bytes([self.event_code, len(self.params)]) + self.params
        return H4Frame(H4Type.HCI_EVENT, payload)

    @classmethod
    def from_frame(cls, frame: H4Frame) -> "HciEvent":
        if frame.h4_type is not H4Type.HCI_EVENT:
            raise InvariantViolation(f"not an HCI event frame: {frame.h4_type!r}")
        frame.validate()
        return cls(frame.payload[0], frame.payload[2:])
