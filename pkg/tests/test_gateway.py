import asyncio
import json
import struct

import numpy as np
import pytest

from armcollect.gateway import GatewayServer, session_status
from armcollect.geometry import Pose, Vec3
from armcollect.session import (
    add_waypoint,
    confirm_placement,
    new_session,
    propose_placement,
    revert_waypoint,
    toggle_gripper,
    tool_down_orientation,
)


class Client:
    """Minimal scripted console speaking the length-prefixed protocol."""

    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer

    @classmethod
    async def connect(cls, host, port):
        reader, writer = await asyncio.open_connection(host, port)
        return cls(reader, writer)

    async def send_raw(self, body: bytes):
        self.writer.write(struct.pack(">I", len(body)) + body)
        await self.writer.drain()

    async def read(self):
        header = await self.reader.readexactly(4)
        (length,) = struct.unpack(">I", header)
        return json.loads((await self.reader.readexactly(length)).decode())

    async def rpc(self, kind, session_id, seq, payload=None, with_status=True):
        await self.send_raw(
            json.dumps(
                {"kind": kind, "session_id": session_id, "seq": seq, "payload": payload or {}}
            ).encode()
        )
        reply = await self.read()
        status = await self.read() if with_status else None
        return reply, status

    def close(self):
        self.writer.close()


@pytest.fixture
def server(panda, table_scene):
    """A live gateway plus a connected client, torn down after the test."""
    loop = asyncio.new_event_loop()
    gw = GatewayServer(panda, table_scene)
    host, port = loop.run_until_complete(gw.start())
    client = loop.run_until_complete(Client.connect(host, port))
    yield loop, gw, client

    async def teardown():
        client.writer.close()
        try:
            await client.writer.wait_closed()
        except (ConnectionResetError, BrokenPipeError):
            pass
        await gw.stop()

    loop.run_until_complete(teardown())
    loop.run_until_complete(loop.shutdown_asyncgens())
    loop.close()


def test_create_session(server):
    loop, gw, client = server
    reply, status = loop.run_until_complete(client.rpc("create_session", "", 1))
    assert reply["kind"] == "ack"
    assert reply["payload"]["session_id"].startswith("s")
    assert status["kind"] == "status"
    assert status["payload"]["state"] == "awaiting_placement"


def test_stale_seq_rejected_session_unchanged(server):
    loop, gw, client = server

    async def run():
        reply, _ = await client.rpc("create_session", "", 5)
        sid = reply["payload"]["session_id"]
        await client.rpc("propose_placement", sid, 6, {"point": [0.3, 0.0, 0.0]})
        before = gw.sessions[sid].session
        reply, status = await client.rpc("propose_placement", sid, 6, {"point": [0.9, 0.9, 0.0]})
        assert reply["kind"] == "error"
        assert reply["payload"]["code"] == "protocol"
        assert gw.sessions[sid].session == before
        assert status["payload"]["candidate"] == [0.3, 0.0, 0.0]

    loop.run_until_complete(run())


def test_malformed_envelope_keeps_connection(server):
    loop, gw, client = server

    async def run():
        await client.send_raw(b"this is not json")
        err = await client.read()
        assert err["kind"] == "error"
        assert err["payload"]["code"] == "protocol"
        reply, _ = await client.rpc("create_session", "", 1)
        assert reply["kind"] == "ack"

    loop.run_until_complete(run())


def test_unknown_kind_rejected(server):
    loop, gw, client = server

    async def run():
        reply, _ = await client.rpc("create_session", "", 1)
        sid = reply["payload"]["session_id"]
        reply, _ = await client.rpc("make_coffee", sid, 2)
        assert reply["kind"] == "error"
        assert reply["payload"]["code"] == "protocol"

    loop.run_until_complete(run())


def test_unknown_session_rejected(server):
    loop, gw, client = server

    async def run():
        reply = await client.rpc("revert", "nope", 1, with_status=False)
        assert reply[0]["kind"] == "error"

    loop.run_until_complete(run())


def test_service_is_thin_adapter(server, panda, table_scene):
    """Driving the protocol equals calling the session ops directly."""
    loop, gw, client = server

    async def run():
        reply, _ = await client.rpc("create_session", "", 1)
        sid = reply["payload"]["session_id"]
        await client.rpc("propose_placement", sid, 2, {"point": [0.3, 0.0, 0.4]})
        await client.rpc("confirm_placement", sid, 3)
        await client.rpc("add_waypoint", sid, 4, {"position": [0.5, 0.1, 0.2]})
        await client.rpc("toggle_gripper", sid, 5)
        await client.rpc("add_waypoint", sid, 6, {"position": [0.45, -0.1, 0.25]})
        await client.rpc("revert", sid, 7)
        return gw.sessions[sid].session

    via_protocol = loop.run_until_complete(run())

    s = new_session(panda)
    s = propose_placement(s, Vec3(0.3, 0.0, 0.4))
    s = confirm_placement(s, table_scene)
    s = add_waypoint(s, Pose(Vec3(0.5, 0.1, 0.2), tool_down_orientation()))
    s = toggle_gripper(s)
    s = add_waypoint(s, Pose(Vec3(0.45, -0.1, 0.25), tool_down_orientation()))
    s = revert_waypoint(s)
    assert via_protocol == s


def test_interleaved_sessions_independent(server, panda, table_scene):
    loop, gw, client = server

    async def run():
        r1, _ = await client.rpc("create_session", "", 1)
        r2, _ = await client.rpc("create_session", "", 1)
        a, b = r1["payload"]["session_id"], r2["payload"]["session_id"]
        await client.rpc("propose_placement", a, 2, {"point": [0.3, 0.0, 0.0]})
        await client.rpc("propose_placement", b, 2, {"point": [0.2, 0.1, 0.0]})
        await client.rpc("confirm_placement", a, 3)
        await client.rpc("confirm_placement", b, 3)
        await client.rpc("add_waypoint", a, 4, {"position": [0.5, 0.1, 0.2]})
        await client.rpc("add_waypoint", b, 4, {"position": [0.5, 0.3, 0.25]})
        await client.rpc("toggle_gripper", b, 5)
        return gw.sessions[a].session, gw.sessions[b].session

    sa, sb = loop.run_until_complete(run())

    ia = new_session(panda)
    ia = propose_placement(ia, Vec3(0.3, 0.0, 0.0))
    ia = confirm_placement(ia, table_scene)
    ia = add_waypoint(ia, Pose(Vec3(0.5, 0.1, 0.2), tool_down_orientation()))
    ib = new_session(panda)
    ib = propose_placement(ib, Vec3(0.2, 0.1, 0.0))
    ib = confirm_placement(ib, table_scene)
    ib = add_waypoint(ib, Pose(Vec3(0.5, 0.3, 0.25), tool_down_orientation()))
    ib = toggle_gripper(ib)
    assert sa == ia
    assert sb == ib


def test_gate_closed_command_returns_error(server):
    loop, gw, client = server

    async def run():
        reply, _ = await client.rpc("create_session", "", 1)
        sid = reply["payload"]["session_id"]
        await client.rpc("propose_placement", sid, 2, {"point": [0.3, 0.0, 0.0]})
        await client.rpc("confirm_placement", sid, 3)
        reply, status = await client.rpc("add_waypoint", sid, 4, {"position": [9.0, 0.0, 0.2]})
        assert reply["kind"] == "error"
        assert reply["payload"]["code"] == "gate_closed"
        assert status["payload"]["waypoints"] == []

    loop.run_until_complete(run())


def test_hand_update_drives_gate_and_shadow(server):
    loop, gw, client = server

    async def run():
        reply, _ = await client.rpc("create_session", "", 1)
        sid = reply["payload"]["session_id"]
        await client.rpc("propose_placement", sid, 2, {"point": [0.3, 0.0, 0.0]})
        _, status = await client.rpc("confirm_placement", sid, 3)
        cam = {
            "position": status["payload"]["base"]["position"],  # wrong camera: far away
            "orientation": [0.0, 0.0, 0.0, 1.0],
        }
        reply, status = await client.rpc(
            "hand_update", sid, 4, {"hand": [0.5, 0.1, 0.3], "camera": cam}
        )
        assert reply["payload"]["gate"]["reason"] == "camera_moved"
        assert not status["payload"]["gate"]["enabled"]
        # back to the saved camera: gate opens, shadow appears
        ext = gw.scene.extrinsics
        cam = {
            "position": [ext.position.x, ext.position.y, ext.position.z],
            "orientation": [
                ext.orientation.x,
                ext.orientation.y,
                ext.orientation.z,
                ext.orientation.w,
            ],
        }
        reply, status = await client.rpc(
            "hand_update", sid, 5, {"hand": [0.5, 0.1, 0.3], "camera": cam}
        )
        assert reply["payload"]["gate"]["enabled"]
        assert status["payload"]["shadow"] is not None
        np.testing.assert_allclose(status["payload"]["shadow"]["center"], [0.5, 0.1, 0.0])

    loop.run_until_complete(run())


def test_follow_commands_buffer_then_append(server):
    loop, gw, client = server

    async def run():
        reply, _ = await client.rpc("create_session", "", 1)
        sid = reply["payload"]["session_id"]
        await client.rpc("propose_placement", sid, 2, {"point": [0.3, 0.0, 0.0]})
        await client.rpc("confirm_placement", sid, 3)
        await client.rpc("follow_begin", sid, 4)
        ee = gw.sessions[sid].session
        from armcollect.session import end_effector_pose

        start = end_effector_pose(ee).position.as_array()
        end = np.array([0.45, 0.15, 0.35])
        seq = 5
        for i in range(1, 21):
            u = i / 20
            p = (start + u * (end - start)).tolist()
            reply, _ = await client.rpc(
                "follow_sample", sid, seq, {"time": 0.05 * i, "position": p,
                                            "orientation": [1.0, 0.0, 0.0, 0.0]}
            )
            seq += 1
        reply, status = await client.rpc("follow_end", sid, seq)
        assert reply["kind"] == "ack"
        assert reply["payload"]["waypoints"] == 20
        assert len(status["payload"]["waypoints"]) == 20

    loop.run_until_complete(run())


def test_replay_and_invisible_marker(server):
    loop, gw, client = server

    async def run():
        reply, _ = await client.rpc("create_session", "", 1)
        sid = reply["payload"]["session_id"]
        await client.rpc("propose_placement", sid, 2, {"point": [0.3, 0.0, 0.0]})
        await client.rpc("confirm_placement", sid, 3)
        await client.rpc("add_waypoint", sid, 4, {"position": [0.5, 0.1, 0.2]})
        await client.rpc("add_waypoint", sid, 5, {"position": [0.45, -0.1, 0.25]})
        reply, _ = await client.rpc("replay", sid, 6, {"rate_hz": 10})
        frames = reply["payload"]["frames"]
        assert len(frames) >= 10
        assert all(f["ghost"] for f in frames)
        reply, status = await client.rpc("set_invisible", sid, 7, {"on": True})
        assert status["payload"]["marker"]["color"] == "green"
        assert "arm" not in status["payload"]

    loop.run_until_complete(run())


def test_status_event_seq_increases(server):
    loop, gw, client = server

    async def run():
        reply, s1 = await client.rpc("create_session", "", 1)
        sid = reply["payload"]["session_id"]
        _, s2 = await client.rpc("propose_placement", sid, 2, {"point": [0.3, 0.0, 0.0]})
        _, s3 = await client.rpc("confirm_placement", sid, 3)
        assert s1["seq"] < s2["seq"] < s3["seq"]

    loop.run_until_complete(run())
