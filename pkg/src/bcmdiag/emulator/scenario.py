"""Declarative scenarios: a line-oriented text format describing
controller profiles, link topology and operator command sequences.

Grammar (``#`` starts a comment):

    controller <name> mac=<mac> [profile=vulnerable|patched|default]
               [allowlist=<mac>[,<mac>...]] [test-packets=<n>]
               [memory=<json-file>]
    link <a> <b>
    <name>: <operator command>

Operator command lines use exactly the interactive client vocabulary
and are executed through an in-process session, so a scenario run
produces the same frames an operator would.  The client's
``scenario run`` consumes the same files, executing the command lines
addressed to its one controller and skipping topology directives.
"""

from __future__ import annotations

import threading
from typing import Callable

from .. import hci
from ..errors import ScenarioError
from ..h4 import Direction, H4Frame
from ..session import Session
from .controller import Controller
from .link import attach_air_link
from .memory import MemoryImage
from .profiles import PROFILE_FACTORIES


class World:
    """A set of named controllers plus their links.  One lock guards
    all inputs: each controller processes strictly serially, and the
    servers' socket threads funnel through here."""

    def __init__(self) -> None:
        self.controllers: dict[str, Controller] = {}
        self.order: list[str] = []
        self.lock = threading.RLock()

    def add(self, name: str, controller: Controller) -> Controller:
        if name in self.controllers:
            raise ValueError(f"duplicate controller name {name!r}")
        self.controllers[name] = controller
        self.order.append(name)
        return controller

    def link(self, a: str, b: str) -> None:
        attach_air_link(self.controllers[a], self.controllers[b])

    def __getitem__(self, name: str) -> Controller:
        return self.controllers[name]


class LocalSession(Session):
    """Session bound directly to an in-process controller; used by the
    scenario runner and by tests.  Responses are synchronous, so
    waiting never blocks."""

    def __init__(self, world: World, name: str, on_line: Callable[[str], None] | None = None):
        super().__init__(name=name)
        self._world = world
        self._controller = world[name]
        self._pending: list[H4Frame] = []
        self._on_line = on_line
        self._controller.add_tap(self._tap)

    def _tap(self, direction: Direction, frame: H4Frame, tick: int) -> None:
        self.record_frame(direction, frame)
        if direction is Direction.CONTROLLER_TO_HOST:
            self._pending.append(frame)
        if self.live_view and self._on_line is not None:
            from ..capture import CaptureRecord, render_live

            self._on_line(render_live(CaptureRecord.at_tick(tick, direction, frame)))

    def _send(self, frame: H4Frame) -> None:
        with self._world.lock:
            self._controller.process_host_frame(frame)

    def wait_frame(self, pred, timeout=None):
        with self._world.lock:
            for i, frame in enumerate(self._pending):
                if pred(frame):
                    return self._pending.pop(i)
        return None


def _parse_kv(parts: list[str], lineno: int) -> dict[str, str]:
    opts = {}
    for part in parts:
        if "=" not in part:
            raise ScenarioError(lineno, f"expected key=value, got {part!r}")
        key, _, value = part.partition("=")
        opts[key] = value
    return opts


def build_controller(name: str, opts: dict[str, str], lineno: int = 0) -> Controller:
    try:
        mac = hci.parse_mac(opts.pop("mac"))
    except KeyError:
        raise ScenarioError(lineno, "controller needs mac=<mac>") from None
    except ValueError as exc:
        raise ScenarioError(lineno, str(exc)) from None
    profile_name = opts.pop("profile", "default")
    factory = PROFILE_FACTORIES.get(profile_name)
    if factory is None:
        raise ScenarioError(lineno, f"unknown profile {profile_name!r}")
    profile = factory()
    if "allowlist" in opts:
        profile.firewall_allowlist = {
            hci.parse_mac(m) for m in opts.pop("allowlist").split(",") if m
        }
    memory = None
    if "memory" in opts:
        memory = MemoryImage.from_file(opts.pop("memory"))
    test_packets = int(opts.pop("test-packets", "100"))
    if opts:
        raise ScenarioError(lineno, f"unknown controller options: {sorted(opts)}")
    return Controller(
        mac, profile=profile, memory=memory, name=name, test_packet_count=test_packets
    )


def parse_scenario(text: str) -> tuple[list[tuple[int, str, list[str]]], list[tuple[int, str, str]]]:
    """Split a scenario into topology directives and command lines.
    Returns ([(lineno, directive, args)], [(lineno, controller, command)]).
    """
    directives: list[tuple[int, str, list[str]]] = []
    commands: list[tuple[int, str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        first, _, rest = line.partition(" ")
        if first in ("controller", "link"):
            directives.append((lineno, first, rest.split()))
            continue
        if first.endswith(":"):
            commands.append((lineno, first[:-1], rest.strip()))
            continue
        raise ScenarioError(
            lineno, f"expected a directive or '<name>: <command>', got {line!r}"
        )
    return directives, commands


def build_world(text: str) -> World:
    """Create controllers and links from a scenario's directives."""
    world = World()
    directives, _ = parse_scenario(text)
    for lineno, directive, args in directives:
        if directive == "controller":
            if not args:
                raise ScenarioError(lineno, "controller needs a name")
            name = args[0]
            world.add(name, build_controller(name, _parse_kv(args[1:], lineno), lineno))
        else:
            if len(args) != 2:
                raise ScenarioError(lineno, "link takes exactly two names")
            for name in args:
                if name not in world.controllers:
                    raise ScenarioError(lineno, f"unknown controller {name!r}")
            world.link(args[0], args[1])
    return world


def run_scenario(
    text: str,
    world: World | None = None,
    on_line: Callable[[str], None] | None = None,
) -> tuple[bool, World, list[str]]:
    """Execute a full scenario: build the topology (unless a prebuilt
    world is supplied), then run every command line through a local
    session on its controller.  Returns (ok, world, transcript)."""
    if world is None:
        world = build_world(text)
    _, commands = parse_scenario(text)
    sessions: dict[str, LocalSession] = {}
    transcript: list[str] = []
    ok = True
    for lineno, target, command in commands:
        if target not in world.controllers:
            raise ScenarioError(lineno, f"unknown controller {target!r}")
        session = sessions.get(target)
        if session is None:
            session = sessions[target] = LocalSession(world, target, on_line=on_line)
        line_ok, lines = session.execute(command)
        ok = ok and line_ok
        for out in lines:
            entry = f"{target}: {out}"
            transcript.append(entry)
            if on_line is not None:
                on_line(entry)
    return ok, world, transcript
