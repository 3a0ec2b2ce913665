"""Operator command vocabulary, shared by the interactive client and
the scenario runner.

Each command maps 1:1 onto a codec or emulator operation and emits
exactly the octets the codec builders produce; a session is a pure
client that only influences a controller through the frames it sends.
Addresses and values are hex with an optional ``0x`` prefix, MACs are
colon-separated hex, test parameters are decimal.
"""

from __future__ import annotations

import struct
from typing import Callable

from . import capture, hci
from .diag import (
    DiagCode,
    HexdumpResponse,
    MemAccessType,
    MemoryHexdump,
    MemoryPeek,
    MemoryPoke,
    PeekResponse,
    PokeResponse,
    RESPONSE_FOR_REQUEST,
    RunTest,
    StatsRequest,
    StatsResponse,
    TestCompleted,
    TestParams,
    ToggleLmpLogging,
    build_diag,
    parse_diag,
)
from .errors import SessionError
from .h4 import Direction, H4Frame, H4Type, HciCommand, HciEvent

USAGE = {
    "diag": "diag on|off",
    "peek": "peek <arm|bluerf> <addr>",
    "poke": "poke <arm|bluerf> <addr> <val>",
    "dump": "dump <addr>",
    "stats": "stats <br|edr|sco|esco|aux|conn> [reset]",
    "test": "test [scenario hop txfreq rxfreq power ptype paylen]   (decimal)",
    "connect": "connect <mac>",
    "leconnect": "leconnect <mac>",
    "sendlmp": "sendlmp <handle> <hex-octets>",
    "firewall": "firewall add|del <mac> | firewall show",
    "scenario": "scenario run <file>",
    "capture": "capture start <path> [pcap|btsnoop] | capture stop",
    "version": "version",
    "live": "live on|off",
}

_ACCESS = {"arm": MemAccessType.ARM, "bluerf": MemAccessType.BLUERF}

_STATS_GETTERS = {
    "br": DiagCode.GET_BR_ACL_STATS,
    "edr": DiagCode.GET_EDR_ACL_STATS,
    "sco": DiagCode.GET_SCO_STATS,
    "esco": DiagCode.GET_ESCO_STATS,
    "aux": DiagCode.GET_AUX_STATS,
    "conn": DiagCode.GET_CONNECTION_STATS,
}


class CommandError(Exception):
    """Bad command line; the message is the usage string."""


def _hex_int(text: str, what: str) -> int:
    try:
        return int(text.removeprefix("0x"), 16)
    except ValueError:
        raise CommandError(f"{what} must be hex (got {text!r})") from None


def _mac(text: str) -> bytes:
    try:
        return hci.parse_mac(text)
    except ValueError as exc:
        raise CommandError(str(exc)) from None


class Session:
    """One operator attachment to a controller's inject/sniff pair.

    Subclasses provide the transport: ``_send`` pushes one frame down
    the inject path, ``wait_frame`` returns the next unconsumed
    controller-to-host frame matching a predicate.  At most one capture
    sink is active per session.
    """

    default_timeout = 2.0

    def __init__(self, name: str | None = None) -> None:
        self.name = name
        self.live_view = False
        self.capture_records: list[capture.CaptureRecord] | None = None
        self._capture_path: str | None = None
        self._capture_format = "pcap"
        self._capture_tick = 0
        self.last_emitted: list[H4Frame] = []

    # transport hooks -------------------------------------------------
    def _send(self, frame: H4Frame) -> None:
        raise NotImplementedError

    def wait_frame(
        self, pred: Callable[[H4Frame], bool], timeout: float | None = None
    ) -> H4Frame | None:
        raise NotImplementedError

    @property
    def inject_up(self) -> bool:
        return True

    # ------------------------------------------------------------------
    def send_frame(self, frame: H4Frame) -> None:
        if not self.inject_up:
            raise SessionError("inject stream is down; command rejected")
        self.last_emitted.append(frame)
        self._send(frame)

    def record_frame(self, direction: Direction, frame: H4Frame) -> None:
        """Feed one sniffed frame to the active capture sink, with a
        session-local logical tick so exports are reproducible."""
        if self.capture_records is not None:
            self.capture_records.append(
                capture.CaptureRecord.at_tick(self._capture_tick, direction, frame)
            )
        self._capture_tick += 1

    # ------------------------------------------------------------------
    def execute(self, line: str) -> tuple[bool, list[str]]:
        """Run one command line; returns (ok, output lines).  Parse
        errors echo usage; controller error statuses render verbatim
        and count as failures."""
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            return True, []
        name = tokens[0]
        handler = getattr(self, f"_cmd_{name}", None)
        if handler is None:
            return False, [f"unknown command {name!r}; try: " + " ".join(sorted(USAGE))]
        try:
            return handler(tokens[1:])
        except CommandError as exc:
            return False, [f"usage: {USAGE.get(name, name)}  ({exc})"]
        except SessionError as exc:
            return False, [str(exc)]

    # ----- response helpers -------------------------------------------

    def _await_diag(self, code: DiagCode, timeout: float | None = None):
        frame = self.wait_frame(
            lambda f: f.h4_type is H4Type.DIAG and f.payload[0] == code,
            timeout,
        )
        if frame is None:
            raise SessionError(f"timeout waiting for diag 0x{code:02x}")
        return parse_diag(frame.payload)

    def _await_command_complete(self, opcode: int, timeout: float | None = None) -> bytes:
        def pred(f: H4Frame) -> bool:
            if f.h4_type is not H4Type.HCI_EVENT or f.payload[0] != hci.EVT_COMMAND_COMPLETE:
                return False
            return struct.unpack_from("<H", f.payload, 3)[0] == opcode

        frame = self.wait_frame(pred, timeout)
        if frame is None:
            raise SessionError(f"timeout waiting for command complete 0x{opcode:04x}")
        return HciEvent.from_frame(frame).params[3:]

    def _await_event(self, event_code: int, timeout: float | None = None) -> HciEvent:
        frame = self.wait_frame(
            lambda f: f.h4_type is H4Type.HCI_EVENT and f.payload[0] == event_code,
            timeout,
        )
        if frame is None:
            raise SessionError(f"timeout waiting for event 0x{event_code:02x}")
        return HciEvent.from_frame(frame)

    # ----- commands -----------------------------------------------------

    def _cmd_diag(self, args: list[str]) -> tuple[bool, list[str]]:
        if len(args) != 1 or args[0] not in ("on", "off"):
            raise CommandError("expected on|off")
        self.send_frame(H4Frame.diag(build_diag(ToggleLmpLogging(args[0] == "on"))))
        return True, [f"LMP logging {args[0]}"]

    def _cmd_peek(self, args: list[str]) -> tuple[bool, list[str]]:
        if len(args) != 2 or args[0] not in _ACCESS:
            raise CommandError("expected <arm|bluerf> <addr>")
        address = _hex_int(args[1], "address")
        self.send_frame(H4Frame.diag(build_diag(MemoryPeek(_ACCESS[args[0]], address))))
        msg: PeekResponse = self._await_diag(DiagCode.PEEK_RESPONSE)
        if msg.status != 0:
            return False, [f"peek failed: controller status 0x{msg.status:02x}"]
        return True, [f"0x{address:08x} = 0x{msg.value:02x}"]

    def _cmd_poke(self, args: list[str]) -> tuple[bool, list[str]]:
        if len(args) != 3 or args[0] not in _ACCESS:
            raise CommandError("expected <arm|bluerf> <addr> <val>")
        address = _hex_int(args[1], "address")
        value = _hex_int(args[2], "value")
        if not 0 <= value <= 0xFF:
            raise CommandError("value is a single octet")
        self.send_frame(
            H4Frame.diag(build_diag(MemoryPoke(_ACCESS[args[0]], address, value)))
        )
        msg: PokeResponse = self._await_diag(DiagCode.POKE_RESPONSE)
        if msg.status != 0:
            return False, [f"poke failed: controller status 0x{msg.status:02x}"]
        return True, [f"0x{address:08x} <- 0x{value:02x}"]

    def _cmd_dump(self, args: list[str]) -> tuple[bool, list[str]]:
        if len(args) != 1:
            raise CommandError("expected <addr>")
        address = _hex_int(args[0], "address")
        self.send_frame(H4Frame.diag(build_diag(MemoryHexdump(address))))
        msg: HexdumpResponse = self._await_diag(DiagCode.HEXDUMP_RESPONSE)
        lines = []
        for off in range(0, len(msg.data), 16):
            chunk = msg.data[off : off + 16]
            lines.append(f"0x{msg.address + off:08x}  {chunk.hex(' ')}")
        return True, lines

    def _cmd_stats(self, args: list[str]) -> tuple[bool, list[str]]:
        if not args or args[0] not in _STATS_GETTERS:
            raise CommandError("expected br|edr|sco|esco|aux|conn")
        if len(args) > 1:
            if args[0] != "br" or args[1] != "reset":
                raise CommandError("only 'stats br reset' resets")
            self.send_frame(
                H4Frame.diag(build_diag(StatsRequest(DiagCode.RESET_BR_ACL_STATS)))
            )
            return True, ["BR ACL statistics reset"]
        getter = _STATS_GETTERS[args[0]]
        self.send_frame(H4Frame.diag(build_diag(StatsRequest(getter))))
        if args[0] == "conn":
            # One record per connection, CPU load always last.
            lines = []
            while True:
                frame = self.wait_frame(
                    lambda f: f.h4_type is H4Type.DIAG
                    and f.payload[0]
                    in (DiagCode.CONNECTION_RESPONSE, DiagCode.CPU_LOAD_RESPONSE)
                )
                if frame is None:
                    raise SessionError("timeout waiting for connection stats")
                msg = parse_diag(frame.payload)
                lines.append(_format_stats(msg))
                if msg.kind is DiagCode.CPU_LOAD_RESPONSE:
                    return True, lines
        msg: StatsResponse = self._await_diag(RESPONSE_FOR_REQUEST[getter])
        return True, [_format_stats(msg)]

    def _cmd_test(self, args: list[str]) -> tuple[bool, list[str]]:
        try:
            numbers = [int(a) for a in args]
        except ValueError:
            raise CommandError("test parameters are decimal") from None
        if len(numbers) > 7:
            raise CommandError("at most 7 parameters")
        defaults = [1, 0, 0, 0, 0, 0, 0]
        defaults[: len(numbers)] = numbers
        params = TestParams(*defaults)
        self.send_frame(H4Frame.diag(build_diag(RunTest(params))))
        msg: TestCompleted = self._await_diag(DiagCode.TEST_COMPLETED, timeout=10.0)
        line = (
            f"test completed: status={msg.status} tx={msg.tx_count} "
            f"rx={msg.rx_count} reserved={msg.reserved}"
        )
        return msg.status == 0, [line]

    def _cmd_connect(self, args: list[str]) -> tuple[bool, list[str]]:
        if len(args) != 1:
            raise CommandError("expected <mac>")
        mac = _mac(args[0])
        params = hci.mac_to_wire(mac) + bytes(7)
        self.send_frame(HciCommand(hci.OPCODE_CREATE_CONNECTION, params).to_frame())
        evt = self._await_event(hci.EVT_CONNECTION_COMPLETE, timeout=5.0)
        status, handle = struct.unpack_from("<BH", evt.params)
        if status != 0:
            return False, [f"connect failed: status 0x{status:02x}"]
        return True, [f"connected to {args[0]}: handle 0x{handle:04x}"]

    def _cmd_leconnect(self, args: list[str]) -> tuple[bool, list[str]]:
        if len(args) != 1:
            raise CommandError("expected <mac>")
        mac = _mac(args[0])
        params = bytes(6) + hci.mac_to_wire(mac) + bytes(13)
        self.send_frame(HciCommand(hci.OPCODE_LE_CREATE_CONNECTION, params).to_frame())
        frame = self.wait_frame(
            lambda f: f.h4_type is H4Type.HCI_EVENT
            and f.payload[0] == hci.EVT_LE_META
            and f.payload[2] == hci.LE_SUBEVT_CONNECTION_COMPLETE,
            5.0,
        )
        if frame is None:
            raise SessionError("timeout waiting for LE connection complete")
        params = HciEvent.from_frame(frame).params
        status, handle = params[1], struct.unpack_from("<H", params, 2)[0]
        if status != 0:
            return False, [f"leconnect failed: status 0x{status:02x}"]
        return True, [f"LE connected to {args[0]}: handle 0x{handle:04x}"]

    def _cmd_sendlmp(self, args: list[str]) -> tuple[bool, list[str]]:
        if len(args) < 2:
            raise CommandError("expected <handle> <hex-octets>")
        handle = _hex_int(args[0], "handle")
        try:
            pdu = bytes.fromhex("".join(args[1:]))
        except ValueError:
            raise CommandError("PDU octets must be hex") from None
        params = struct.pack("<H", handle) + pdu
        self.send_frame(HciCommand(hci.OPCODE_VSC_SEND_LMP_PDU, params).to_frame())
        ret = self._await_command_complete(hci.OPCODE_VSC_SEND_LMP_PDU)
        if ret and ret[0] != 0:
            return False, [f"sendlmp rejected: status 0x{ret[0]:02x}"]
        return True, [f"injected {len(pdu)} LMP octets on handle 0x{handle:04x}"]

    def _cmd_firewall(self, args: list[str]) -> tuple[bool, list[str]]:
        if not args:
            raise CommandError("expected add|del|show")
        action = args[0]
        if action == "show":
            self.send_frame(HciCommand(hci.OPCODE_VSC_FIREWALL_SHOW).to_frame())
            ret = self._await_command_complete(hci.OPCODE_VSC_FIREWALL_SHOW)
            enabled, count = ret[1], ret[2]
            if not enabled:
                return True, ["firewall disabled (all peers allowed)"]
            macs = [
                hci.format_mac(hci.mac_from_wire(ret[3 + 6 * i : 9 + 6 * i]))
                for i in range(count)
            ]
            return True, [f"firewall allowlist ({count}):"] + [f"  {m}" for m in macs]
        if action not in ("add", "del") or len(args) != 2:
            raise CommandError("expected add|del <mac>")
        opcode = (
            hci.OPCODE_VSC_FIREWALL_ADD if action == "add" else hci.OPCODE_VSC_FIREWALL_DEL
        )
        self.send_frame(HciCommand(opcode, hci.mac_to_wire(_mac(args[1]))).to_frame())
        ret = self._await_command_complete(opcode)
        if ret and ret[0] != 0:
            return False, [f"firewall {action} failed: status 0x{ret[0]:02x}"]
        return True, [f"firewall {action} {args[1]}"]

    def _cmd_version(self, args: list[str]) -> tuple[bool, list[str]]:
        if args:
            raise CommandError("takes no arguments")
        self.send_frame(HciCommand(hci.OPCODE_READ_LOCAL_VERSION).to_frame())
        ret = self._await_command_complete(hci.OPCODE_READ_LOCAL_VERSION)
        info = hci.parse_local_version(ret)
        line = (
            f"hci {info['hci_version']}.{info['hci_revision']:#06x} "
            f"lmp {info['lmp_version']}.{info['lmp_subversion']:#06x} "
            f"manufacturer {info['manufacturer']:#06x}"
        )
        return info["status"] == 0, [line]

    def _cmd_live(self, args: list[str]) -> tuple[bool, list[str]]:
        if len(args) != 1 or args[0] not in ("on", "off"):
            raise CommandError("expected on|off")
        self.live_view = args[0] == "on"
        return True, [f"live view {args[0]}"]

    def _cmd_capture(self, args: list[str]) -> tuple[bool, list[str]]:
        if args and args[0] == "stop":
            if self.capture_records is None:
                return False, ["no capture running"]
            records = self.capture_records
            self.capture_records = None
            if self._capture_format == "btsnoop":
                skipped = capture.write_btsnoop(records, self._capture_path)
                return True, [
                    f"wrote {len(records) - skipped} HCI records to "
                    f"{self._capture_path} (skipped {skipped} non-HCI)"
                ]
            capture.write_pcap(records, self._capture_path)
            return True, [f"wrote {len(records)} records to {self._capture_path}"]
        if len(args) < 2 or args[0] != "start":
            raise CommandError("expected start <path> [pcap|btsnoop] or stop")
        if self.capture_records is not None:
            return False, ["capture already running (one sink per session)"]
        fmt = args[2] if len(args) > 2 else "pcap"
        if fmt not in ("pcap", "btsnoop"):
            raise CommandError("format is pcap or btsnoop")
        self._capture_path = args[1]
        self._capture_format = fmt
        self._capture_tick = 0
        self.capture_records = []
        return True, [f"capturing to {args[1]} ({fmt})"]

    def _cmd_scenario(self, args: list[str]) -> tuple[bool, list[str]]:
        if len(args) != 2 or args[0] != "run":
            raise CommandError("expected run <file>")
        return self.run_script_file(args[1])

    def run_script_file(self, path: str) -> tuple[bool, list[str]]:
        """Replay a scenario file against this session.  Topology
        directives need the emulator and are skipped here; command
        lines run when their controller name matches this session (a
        bare command line always matches)."""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            return False, [str(exc)]
        ok = True
        out: list[str] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            first = line.split()[0]
            if first in ("controller", "link"):
                out.append(f"line {lineno}: skipped emulator directive {first!r}")
                continue
            if ":" in first:
                target, _, rest = line.partition(":")
                if self.name is not None and target.strip() != self.name:
                    out.append(f"line {lineno}: skipped (for controller {target.strip()!r})")
                    continue
                line = rest.strip()
            line_ok, lines = self.execute(line)
            ok = ok and line_ok
            out.extend(lines)
        return ok, out


def _format_stats(msg: StatsResponse) -> str:
    fields = " ".join(f"{k}={v}" for k, v in msg.as_dict().items())
    return f"{DiagCode(msg.kind).name}: {fields}"
