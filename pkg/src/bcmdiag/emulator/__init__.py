"""Controller emulation: state machine, virtual air link, memory image,
security profiles, scenario runner and stream servers."""

from .controller import Connection, Controller, Phase, Role, Transport
from .link import VirtualLink, attach_air_link
from .memory import MemoryImage
from .profiles import (
    HandlerAction,
    SecurityProfile,
    patched_profile,
    vulnerable_profile,
)

__all__ = [
    "Connection",
    "Controller",
    "HandlerAction",
    "MemoryImage",
    "Phase",
    "Role",
    "SecurityProfile",
    "Transport",
    "VirtualLink",
    "attach_air_link",
    "patched_profile",
    "vulnerable_profile",
]
