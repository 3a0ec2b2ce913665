"""Capture persistence and live rendering.

Timestamps are logical-tick derived (1 tick = 625 microseconds, one
Bluetooth slot) so captures of identical runs are byte-identical.

File formats:

* pcapng with one interface per link type.  Standard HCI traffic
  (commands, events, ACL, SCO) uses LINKTYPE_BLUETOOTH_HCI_H4_WITH_PHDR
  (201) with the usual 4-octet big-endian direction word.  Diagnostic
  and other vendor-envelope frames have no registered link type, so
  they use LINKTYPE_USER0 (147) with a 1-octet direction prefix before
  the 64-octet envelope; the section header carries a comment spelling
  that convention out.
* BTSnoop (datalink 1002, H4 with type octet).  BTSnoop is HCI-only:
  vendor-envelope frames are skipped and counted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from . import hci, ll
from .diag import (
    DiagCode,
    HexdumpResponse,
    LcpLogRecord,
    LmpLogRecord,
    MemoryHexdump,
    MemoryPeek,
    MemoryPoke,
    PeekResponse,
    PokeResponse,
    RunTest,
    StatsRequest,
    StatsResponse,
    TestCompleted,
    ToggleLmpLogging,
    message_direction,
    parse_diag,
)
from .errors import BcmDiagError
from .h4 import (
    Direction,
    H4Frame,
    H4Type,
    HciCommand,
    HciEvent,
    decode_one,
    direction_legal,
    encode_frame,
)

TICK_US = 625

LINKTYPE_H4_WITH_PHDR = 201
LINKTYPE_DIAG = 147  # LINKTYPE_USER0, private to this toolkit

_HCI_TYPES = frozenset(
    {H4Type.HCI_COMMAND, H4Type.ACL_DATA, H4Type.SCO_DATA, H4Type.HCI_EVENT}
)

# BTSnoop epoch offset: microseconds between year 0 and 2000-01-01.
_BTSNOOP_EPOCH_2000 = 0x00E03AB44A676000


@dataclass(frozen=True)
class CaptureRecord:
    timestamp_us: int
    direction: Direction
    frame: H4Frame

    @classmethod
    def at_tick(cls, tick: int, direction: Direction, frame: H4Frame) -> "CaptureRecord":
        return cls(tick * TICK_US, direction, frame)


def _pcapng_block(block_type: int, body: bytes) -> bytes:
    total = 12 + len(body) + (-len(body) % 4)
    return (
        struct.pack("<II", block_type, total)
        + body
        + b"\x00" * (-len(body) % 4)
        + struct.pack("<I", total)
    )


def _pcapng_option(code: int, value: bytes) -> bytes:
    return struct.pack("<HH", code, len(value)) + value + b"\x00" * (-len(value) % 4)


_SHB_COMMENT = (
    b"bcmdiag capture; diagnostic frames use LINKTYPE_USER0 (147): "
    b"1-octet direction (0=host->controller) + 64-octet vendor envelope"
)


class PcapngWriter:
    """Writes records into a two-interface pcapng file.

    Interfaces are created lazily in first-use order, so an HCI-only
    capture carries a single link type.
    """

    def __init__(self, path: str):
        self._fh = open(path, "wb")
        self._iface_ids: dict[int, int] = {}
        body = (
            struct.pack("<IHHq", 0x1A2B3C4D, 1, 0, -1)
            + _pcapng_option(1, _SHB_COMMENT)
            + _pcapng_option(0, b"")
        )
        self._fh.write(_pcapng_block(0x0A0D0D0A, body))

    def _iface(self, linktype: int, name: bytes) -> int:
        iface = self._iface_ids.get(linktype)
        if iface is None:
            iface = len(self._iface_ids)
            self._iface_ids[linktype] = iface
            body = (
                struct.pack("<HHI", linktype, 0, 0)
                + _pcapng_option(2, name)  # if_name
                + _pcapng_option(0, b"")
            )
            self._fh.write(_pcapng_block(0x00000001, body))
        return iface

    def write_record(self, record: CaptureRecord) -> None:
        if record.frame.h4_type in _HCI_TYPES:
            iface = self._iface(LINKTYPE_H4_WITH_PHDR, b"hci")
            data = struct.pack(">I", int(record.direction)) + encode_frame(record.frame)
        else:
            iface = self._iface(LINKTYPE_DIAG, b"diag")
            data = bytes([int(record.direction)]) + encode_frame(record.frame)
        body = (
            struct.pack(
                "<IIIII",
                iface,
                record.timestamp_us >> 32,
                record.timestamp_us & 0xFFFFFFFF,
                len(data),
                len(data),
            )
            + data
        )
        self._fh.write(_pcapng_block(0x00000006, body))

    def close(self) -> None:
        self._fh.close()


def write_pcap(records: list[CaptureRecord], path: str) -> int:
    """Export a capture as pcapng; returns the record count."""
    writer = PcapngWriter(path)
    try:
        for record in records:
            writer.write_record(record)
    finally:
        writer.close()
    return len(records)


class BtsnoopWriter:
    def __init__(self, path: str):
        self._fh = open(path, "wb")
        self._fh.write(struct.pack(">8sII", b"btsnoop\x00", 1, 1002))
        self.skipped = 0

    def write_record(self, record: CaptureRecord) -> None:
        if record.frame.h4_type not in _HCI_TYPES:
            self.skipped += 1
            return
        data = encode_frame(record.frame)
        flags = int(record.direction)
        if record.frame.h4_type in (H4Type.HCI_COMMAND, H4Type.HCI_EVENT):
            flags |= 0x02
        self._fh.write(
            struct.pack(
                ">IIIIq",
                len(data),
                len(data),
                flags,
                0,
                _BTSNOOP_EPOCH_2000 + record.timestamp_us,
            )
        )
        self._fh.write(data)

    def close(self) -> None:
        self._fh.close()


def write_btsnoop(records: list[CaptureRecord], path: str) -> int:
    """Export the HCI subset of a capture; returns how many non-HCI
    records were skipped."""
    writer = BtsnoopWriter(path)
    try:
        for record in records:
            writer.write_record(record)
    finally:
        writer.close()
    return writer.skipped


# ----- sniff stream framing ----------------------------------------------

def encode_sniff_record(direction: Direction, frame: H4Frame) -> bytes:
    """Wire form of one sniff-port record: a 1-octet direction prefix,
    then the self-delimiting H4 frame."""
    return bytes([int(direction)]) + encode_frame(frame)


class SniffStreamDecoder:
    """Incremental decoder for the direction-prefixed sniff stream."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[Direction, H4Frame]]:
        self._buf += data
        out: list[tuple[Direction, H4Frame]] = []
        while len(self._buf) >= 2:
            direction = Direction(self._buf[0])
            frame, consumed = decode_one(bytes(self._buf[1:]))
            if frame is None:
                break
            out.append((direction, frame))
            del self._buf[: 1 + consumed]
        return out


# ----- live rendering ---------------------------------------------------

def _render_hci_command(frame: H4Frame) -> str:
    cmd = HciCommand.from_frame(frame)
    name = hci.OPCODE_NAMES.get(cmd.opcode, f"0x{cmd.opcode:04x}")
    params = cmd.params.hex() if cmd.params else "-"
    return f"HCI cmd {name} {params}"

def _render_hci_event(frame: H4Frame) -> str:
    evt = HciEvent.from_frame(frame)
    name = hci.EVENT_NAMES.get(evt.event_code, f"0x{evt.event_code:02x}")
    params = evt.params.hex() if evt.params else "-"
    return f"HCI evt {name} {params}"

def _render_ll_record(msg: LmpLogRecord | LcpLogRecord) -> str:
    mac = hci.format_mac(msg.full_mac) if isinstance(msg, LcpLogRecord) else msg.low_mac.hex()
    way = "TX" if msg.sent else "RX"
    try:
        if isinstance(msg, LmpLogRecord):
            pdu = ll.dissect_lmp(msg.payload, padded_to_17=True)
        else:
            pdu = ll.dissect_lcp(msg.payload)
        return f"DIAG LL {way} {ll.render_text(pdu, mac=mac)}"
    except BcmDiagError:
        kind = "LMP" if isinstance(msg, LmpLogRecord) else "LCP"
        opcode = msg.payload[0] >> 1 if isinstance(msg, LmpLogRecord) else msg.payload[0]
        return f"DIAG LL {way} {mac} {kind}_unknown(0x{opcode:02x}) {msg.payload.hex()}"

def _render_diag(frame: H4Frame) -> str:
    try:
        msg = parse_diag(frame.payload)
    except BcmDiagError:
        return f"DIAG raw {frame.payload.rstrip(chr(0).encode()).hex() or '00'}"
    if isinstance(msg, ToggleLmpLogging):
        return f"DIAG LMP logging {'ON' if msg.enable else 'OFF'}"
    if isinstance(msg, (LmpLogRecord, LcpLogRecord)):
        return _render_ll_record(msg)
    if isinstance(msg, MemoryPeek):
        return f"DIAG peek {msg.access.name.lower()} 0x{msg.address:08x}"
    if isinstance(msg, MemoryPoke):
        return f"DIAG poke {msg.access.name.lower()} 0x{msg.address:08x} = 0x{msg.value:02x}"
    if isinstance(msg, MemoryHexdump):
        return f"DIAG hexdump 0x{msg.address:08x}"
    if isinstance(msg, PeekResponse):
        return f"DIAG peek -> status={msg.status} value=0x{msg.value:02x}"
    if isinstance(msg, PokeResponse):
        return f"DIAG poke -> status={msg.status}"
    if isinstance(msg, HexdumpResponse):
        return f"DIAG hexdump 0x{msg.address:08x} -> {msg.data.hex()}"
    if isinstance(msg, RunTest):
        return f"DIAG run test {msg.params.pack().hex()}"
    if isinstance(msg, TestCompleted):
        return (
            f"DIAG test completed status={msg.status} tx={msg.tx_count} "
            f"rx={msg.rx_count} reserved={msg.reserved}"
        )
    if isinstance(msg, StatsResponse):
        fields = " ".join(f"{k}={v}" for k, v in msg.as_dict().items())
        return f"DIAG stats {DiagCode(msg.kind).name} {fields}"
    if isinstance(msg, StatsRequest):
        return f"DIAG stats request {DiagCode(msg.kind).name}"
    return f"DIAG {frame.payload.hex()}"  # pragma: no cover


def _direction_flag(record: CaptureRecord) -> str:
    """Direction audit: note frames flowing against their legal
    direction (a warning appended to the line, never a failure)."""
    frame = record.frame
    if not direction_legal(frame.h4_type, record.direction):
        return "  [direction violation]"
    if frame.h4_type is H4Type.DIAG:
        try:
            msg = parse_diag(frame.payload)
        except BcmDiagError:
            return ""
        if message_direction(msg) is not record.direction:
            return "  [direction violation]"
    return ""


def render_live(record: CaptureRecord) -> str:
    """One deterministic line per record: timestamp, direction arrow,
    frame summary.  Total over every frame kind -- undecodable content
    falls back to hex rather than raising."""
    frame = record.frame
    try:
        if frame.h4_type is H4Type.HCI_COMMAND:
            summary = _render_hci_command(frame)
        elif frame.h4_type is H4Type.HCI_EVENT:
            summary = _render_hci_event(frame)
        elif frame.h4_type is H4Type.ACL_DATA:
            handle_flags, length = struct.unpack_from("<HH", frame.payload)
            summary = f"ACL handle=0x{handle_flags & 0x0fff:04x} len={length}"
        elif frame.h4_type is H4Type.SCO_DATA:
            handle = struct.unpack_from("<H", frame.payload)[0] & 0x0FFF
            summary = f"SCO handle=0x{handle:04x} len={frame.payload[2]}"
        elif frame.h4_type is H4Type.DIAG:
            summary = _render_diag(frame)
        else:
            summary = f"{frame.h4_type.name} {frame.payload.rstrip(chr(0).encode()).hex() or '00'}"
        summary += _direction_flag(record)
    except Exception:
        summary = f"{frame.h4_type.name} raw {frame.payload.hex()}"
    return f"{record.timestamp_us:>10} us {record.direction.arrow} {summary}"
