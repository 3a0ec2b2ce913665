"""Exception types shared by the codecs and the emulator."""


class BcmDiagError(Exception):
    """Base class for every error raised by this package."""


class UnknownH4Type(BcmDiagError):
    """Leading stream octet is not a known H4 traffic type."""

    def __init__(self, byte: int, offset: int):
        super().__init__(f"unknown H4 type 0x{byte:02x} at stream offset {offset}")
        self.byte = byte
        self.offset = offset


class InvariantViolation(BcmDiagError):
    """A value handed to an encoder violates its wire invariants."""


class UnknownDiagCode(BcmDiagError):
    def __init__(self, code: int):
        super().__init__(f"unknown diagnostic code 0x{code:02x}")
        self.code = code


class MalformedBody(BcmDiagError):
    """Diagnostic message body does not match the layout for its code."""

    def __init__(self, code: int, reason: str):
        super().__init__(f"malformed body for code 0x{code:02x}: {reason}")
        self.code = code
        self.reason = reason


class UnknownOpcode(BcmDiagError):
    """Link-layer opcode with no table entry."""

    def __init__(self, opcode: int | None, kind: str = "LMP"):
        shown = "<empty>" if opcode is None else f"0x{opcode:02x}"
        super().__init__(f"unknown {kind} opcode {shown}")
        self.opcode = opcode
        self.kind = kind


class UnknownVendorSubtype(BcmDiagError):
    def __init__(self, subtype: int):
        super().__init__(f"unknown vendor LCP subtype 0x{subtype:02x}")
        self.subtype = subtype


class LengthMismatch(BcmDiagError):
    """PDU length disagrees with the opcode table."""


class AlreadyLinked(BcmDiagError):
    """Controller is already attached to a virtual air link."""


class ScenarioError(BcmDiagError):
    """Bad scenario file line."""

    def __init__(self, lineno: int, reason: str):
        super().__init__(f"scenario line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


class SessionError(BcmDiagError):
    """Client session failure (stream down, timeout, controller error)."""
