import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bcmdiag import hci
from bcmdiag.emulator import Controller, attach_air_link
from bcmdiag.emulator.profiles import patched_profile, vulnerable_profile

from helpers import MAC_A, MAC_B


@pytest.fixture
def linked_pair():
    """Two freshly linked controllers, default (patched) profiles."""
    a = Controller(MAC_A, name="A")
    b = Controller(MAC_B, name="B")
    attach_air_link(a, b)
    return a, b


@pytest.fixture
def linked_pair_vulnerable():
    a = Controller(MAC_A, profile=patched_profile(), name="A")
    b = Controller(MAC_B, profile=vulnerable_profile(), name="B")
    attach_air_link(a, b)
    return a, b


def connect_pair(a: Controller, b: Controller, transport: str = "classic"):
    """Drive a full connection setup from a to b; returns a's new handle
    (the frames a emitted during setup are available as `.frames`)."""
    from bcmdiag.h4 import HciCommand

    if transport == "classic":
        cmd = HciCommand(hci.OPCODE_CREATE_CONNECTION, hci.mac_to_wire(b.mac) + bytes(7))
    else:
        cmd = HciCommand(
            hci.OPCODE_LE_CREATE_CONNECTION, bytes(6) + hci.mac_to_wire(b.mac) + bytes(13)
        )
    frames = a.process_host_frame(cmd.to_frame())
    handles = sorted(a.connections)
    assert handles, "connection setup failed"
    handle = _Handle(handles[-1])
    handle.frames = frames
    return handle


class _Handle(int):
    """Connection handle that also carries the initiator's setup frames."""

    frames: list
