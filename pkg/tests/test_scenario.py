"""Scenario file parsing and the in-process runner."""

import pytest

from bcmdiag.emulator.scenario import (
    LocalSession,
    World,
    build_world,
    parse_scenario,
    run_scenario,
)
from bcmdiag.errors import ScenarioError

from helpers import MAC_A, MAC_B

TOPOLOGY = """\
# two chips on one air link
controller A mac=00:11:22:33:44:01 profile=patched
controller B mac=00:11:22:33:44:02 profile=vulnerable test-packets=25
link A B
"""


class TestParsing:
    def test_directives_and_commands_split(self):
        directives, commands = parse_scenario(TOPOLOGY + "A: diag on\nB: version\n")
        assert [d[1] for d in directives] == ["controller", "controller", "link"]
        assert commands == [(5, "A", "diag on"), (6, "B", "version")]

    def test_comments_and_blanks_ignored(self):
        directives, commands = parse_scenario("\n# nothing\n   \n")
        assert directives == [] and commands == []

    def test_bad_line_rejected(self):
        with pytest.raises(ScenarioError):
            parse_scenario("frobnicate all the things\n")

    def test_unknown_profile_rejected(self):
        with pytest.raises(ScenarioError):
            build_world("controller A mac=00:11:22:33:44:01 profile=bogus\n")

    def test_missing_mac_rejected(self):
        with pytest.raises(ScenarioError):
            build_world("controller A profile=patched\n")

    def test_unknown_option_rejected(self):
        with pytest.raises(ScenarioError):
            build_world("controller A mac=00:11:22:33:44:01 color=red\n")

    def test_link_unknown_controller_rejected(self):
        with pytest.raises(ScenarioError):
            build_world("controller A mac=00:11:22:33:44:01\nlink A B\n")


class TestWorldBuilding:
    def test_topology(self):
        world = build_world(TOPOLOGY)
        assert world.order == ["A", "B"]
        assert world["A"].mac == MAC_A
        assert world["B"].profile.bpcs_bounds_check is False
        assert world["B"].test_packet_count == 25
        assert world["A"].link is world["B"].link is not None

    def test_allowlist_option(self):
        world = build_world(
            "controller A mac=00:11:22:33:44:01 allowlist=00:11:22:33:44:02\n"
        )
        assert world["A"].profile.firewall_allowlist == {MAC_B}

    def test_memory_option_loads_json_image(self, tmp_path):
        import json

        from bcmdiag.diag import MemAccessType

        image = tmp_path / "image.json"
        image.write_text(
            json.dumps(
                {
                    "regions": [
                        {"base": "0x00200000", "kind": "arm", "contents": "c0ffee", "size": 64},
                        {"base": 0, "kind": "bluerf", "size": 16},
                    ]
                }
            )
        )
        world = build_world(
            f"controller A mac=00:11:22:33:44:01 memory={image}\n"
        )
        assert world["A"].memory.read(MemAccessType.ARM, 0x00200000) == 0xC0
        assert world["A"].memory.read(MemAccessType.ARM, 0x00200002) == 0xEE
        assert world["A"].memory.read(MemAccessType.ARM, 0x00200040) is None
        assert world["A"].memory.read(MemAccessType.BLUERF, 0) == 0


class TestRunning:
    def test_full_scenario(self):
        text = TOPOLOGY + (
            "A: diag on\n"
            "B: diag on\n"
            "A: connect 00:11:22:33:44:02\n"
            "A: leconnect 00:11:22:33:44:02\n"
            "A: stats br\n"
            "A: firewall add 00:11:22:33:44:02\n"
            "A: firewall show\n"
            "B: test\n"
        )
        ok, world, transcript = run_scenario(text)
        assert ok
        assert world["A"].connections and world["B"].connections
        assert any("connected to 00:11:22:33:44:02" in line for line in transcript)
        assert any("LE connected to 00:11:22:33:44:02" in line for line in transcript)
        assert any("firewall allowlist (1)" in line for line in transcript)
        assert any("tx=25 rx=25" in line for line in transcript)
        assert world["A"].profile.firewall_allowlist == {MAC_B}

    def test_scenario_run_command_nests(self, tmp_path):
        inner = tmp_path / "inner.scenario"
        inner.write_text("A: version\n")
        world = build_world("controller A mac=00:11:22:33:44:01\n")
        session = LocalSession(world, "A")
        ok, lines = session.execute(f"scenario run {inner}")
        assert ok
        assert any("manufacturer" in line for line in lines)

    def test_failure_propagates(self):
        ok, _world, transcript = run_scenario(TOPOLOGY + "A: peek arm 0xdead0000\n")
        assert not ok
        assert any("peek failed" in line for line in transcript)

    def test_unknown_target_rejected(self):
        with pytest.raises(ScenarioError):
            run_scenario("controller A mac=00:11:22:33:44:01\nZ: version\n")

    def test_local_session_golden_frames(self):
        """Commands emit exactly the octets the codec builders make."""
        from bcmdiag import hci
        from bcmdiag.diag import (
            MemoryHexdump,
            MemoryPeek,
            MemAccessType,
            ToggleLmpLogging,
            build_diag,
        )
        from bcmdiag.h4 import H4Frame, HciCommand, encode_frame

        world = build_world("controller A mac=00:11:22:33:44:01\n")
        session = LocalSession(world, "A")
        expectations = [
            ("diag on", H4Frame.diag(build_diag(ToggleLmpLogging(True)))),
            ("version", HciCommand(hci.OPCODE_READ_LOCAL_VERSION).to_frame()),
            ("peek arm 0x200000", H4Frame.diag(build_diag(MemoryPeek(MemAccessType.ARM, 0x200000)))),
            ("dump 200000", H4Frame.diag(build_diag(MemoryHexdump(0x200000)))),
        ]
        for line, expected in expectations:
            session.last_emitted.clear()
            session.execute(line)
            assert [encode_frame(f) for f in session.last_emitted] == [
                encode_frame(expected)
            ], line

    def test_diag_on_emits_padded_toggle(self):
        world = build_world("controller A mac=00:11:22:33:44:01\n")
        session = LocalSession(world, "A")
        session.execute("diag on")
        from bcmdiag.h4 import encode_frame

        wire = encode_frame(session.last_emitted[0])
        assert wire[:3] == b"\x07\xf0\x01"
        assert len(wire) == 64

    def test_usage_errors_echo_usage(self):
        world = build_world("controller A mac=00:11:22:33:44:01\n")
        session = LocalSession(world, "A")
        ok, lines = session.execute("peek sideways 0x0")
        assert not ok
        assert lines and lines[0].startswith("usage: peek")
        ok, lines = session.execute("warp 9")
        assert not ok and "unknown command" in lines[0]

    def test_one_capture_sink_per_session(self, tmp_path):
        world = build_world("controller A mac=00:11:22:33:44:01\n")
        session = LocalSession(world, "A")
        first = str(tmp_path / "one.pcapng")
        ok, _ = session.execute(f"capture start {first}")
        assert ok
        ok, lines = session.execute(f"capture start {tmp_path / 'two.pcapng'}")
        assert not ok and "already running" in lines[0]
        ok, _ = session.execute("capture stop")
        assert ok
        ok, lines = session.execute("capture stop")
        assert not ok and "no capture running" in lines[0]
