"""Service surface: length-prefixed JSON envelopes over TCP.

Framing: 4-byte big-endian length, then a UTF-8 JSON object
{"kind": ..., "session_id": ..., "seq": ..., "payload": {...}}.
Every command is answered with an ack or error envelope (echoing the
request seq) followed by a status event carrying a full session snapshot.
Session sequence numbers must strictly increase; a stale or repeated seq
is rejected without touching the session.

One connection may multiplex sessions; per-session commands are
serialized by a lock while heavy work (capture, export, audit) runs in a
thread pool so other sessions stay responsive.
"""
from __future__ import annotations

import asyncio
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

from . import record as record_mod
from . import session as session_mod
from .errors import (
    ArmCollectError,
    ConfigError,
    CorruptRecord,
    EmptyStream,
    GateClosed,
    IkFailed,
    InvalidState,
    IoFailure,
    NothingToRevert,
    NoWaypoints,
    PointBelowPlane,
    ProtocolError,
    UnsupportedVersion,
)
from .geometry import Pose, UnitQuat, Vec3
from .kinematics import KinematicChain, joint_origins, load_chain
from .scene import SceneModel, load_scene
from .session import (
    CameraExtrinsics,
    CollectionSession,
    SessionState,
    add_waypoint,
    confirm_placement,
    control_gate,
    end_effector_pose,
    follow_hand,
    generate_replay,
    new_session,
    project_shadow,
    propose_placement,
    revert_waypoint,
    set_invisible_robot,
    tool_down_orientation,
    toggle_gripper,
)

HEADER_SIZE = 4
MAX_MESSAGE_SIZE = 16 * 1024 * 1024
SEGMENT_POLYLINE_POINTS = 33

_ERROR_CODES = {
    InvalidState: "invalid_state",
    GateClosed: "gate_closed",
    IkFailed: "ik_failed",
    NothingToRevert: "nothing_to_revert",
    EmptyStream: "empty_stream",
    PointBelowPlane: "point_below_plane",
    NoWaypoints: "no_waypoints",
    CorruptRecord: "corrupt_record",
    UnsupportedVersion: "unsupported_version",
    IoFailure: "io_failure",
    ConfigError: "config",
    ProtocolError: "protocol",
}


def error_code(exc: Exception) -> str:
    for klass, code in _ERROR_CODES.items():
        if isinstance(exc, klass):
            return code
    return "internal"


@dataclass
class SessionEntry:
    session: CollectionSession
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)
    last_seq: int = -1
    event_seq: int = 0
    last_hand: Vec3 | None = None
    last_camera: CameraExtrinsics | None = None
    follow_buffer: list = field(default_factory=list)
    captured: record_mod.DemonstrationRecord | None = None


def _vec(v) -> Vec3:
    if not (isinstance(v, (list, tuple)) and len(v) == 3):
        raise ProtocolError("expected [x, y, z]")
    return Vec3(float(v[0]), float(v[1]), float(v[2]))


def _quat(v) -> UnitQuat:
    if not (isinstance(v, (list, tuple)) and len(v) == 4):
        raise ProtocolError("expected [x, y, z, w]")
    return UnitQuat.normalized(float(v[0]), float(v[1]), float(v[2]), float(v[3]))


def _pose_payload(payload) -> Pose:
    position = _vec(payload.get("position"))
    ori = payload.get("orientation")
    orientation = _quat(ori) if ori is not None else tool_down_orientation()
    return Pose(position, orientation)


def _camera_payload(payload) -> CameraExtrinsics:
    return CameraExtrinsics(_vec(payload["position"]), _quat(payload["orientation"]))


def _vec_list(v: Vec3) -> list[float]:
    return [v.x, v.y, v.z]


def _quat_list(q: UnitQuat) -> list[float]:
    return [q.x, q.y, q.z, q.w]


def _decimate(points, limit: int):
    if len(points) <= limit:
        return list(points)
    idx = [round(i * (len(points) - 1) / (limit - 1)) for i in range(limit)]
    return [points[i] for i in idx]


def session_status(entry: SessionEntry, scene: SceneModel) -> dict:
    """Full operator-facing snapshot; derived, never authoritative."""
    s = entry.session
    camera = entry.last_camera if entry.last_camera is not None else scene.extrinsics
    gate = control_gate(s, entry.last_hand, camera)
    shadow = None
    if entry.last_hand is not None and s.state is SessionState.COLLECTING:
        try:
            rect = project_shadow(s, entry.last_hand, scene.table)
            shadow = {
                "center": _vec_list(rect.center),
                "length": rect.length,
                "width": rect.width,
                "heading": rect.heading,
            }
        except PointBelowPlane:
            shadow = None
    status = {
        "state": s.state.value,
        "clock": s.clock,
        "gripper": s.gripper.value,
        "gripper_color": s.gripper.color,
        "invisible_robot": s.invisible_robot,
        "candidate": _vec_list(s.candidate) if s.candidate is not None else None,
        "base": {
            "position": _vec_list(s.base_pose.position),
            "orientation": _quat_list(s.base_pose.orientation),
        },
        "waypoints": [
            {
                "index": wp.index,
                "position": _vec_list(wp.target_pose.position),
                "gripper": wp.gripper.value,
            }
            for wp in s.waypoints
        ],
        "segments": [
            {
                "from": seg.from_index,
                "to": seg.to_index,
                "points": [_vec_list(p) for p in _decimate(seg.positions, SEGMENT_POLYLINE_POINTS)],
            }
            for seg in s.segments
        ],
        "gate": {"enabled": gate.enabled, "reason": gate.reason.value},
        "shadow": shadow,
    }
    if s.state in (SessionState.COLLECTING, SessionState.FOLLOW_MODE):
        ee = end_effector_pose(s)
        if s.invisible_robot:
            status["marker"] = {
                "position": _vec_list(ee.position),
                "orientation": _quat_list(ee.orientation),
                "color": s.gripper.color,
            }
        else:
            pts = joint_origins(s.chain, s.current_q)
            bq = s.base_pose.orientation.as_array()
            bp = s.base_pose.position.as_array()
            from .geometry import quat_rotate

            status["arm"] = {
                "joints": [(bp + quat_rotate(bq, p)).tolist() for p in pts],
                "ee": {"position": _vec_list(ee.position), "orientation": _quat_list(ee.orientation)},
            }
    return status


class GatewayServer:
    """Thin adapter: each command maps 1:1 onto a session-module operation."""

    def __init__(
        self,
        chain: KinematicChain,
        scene: SceneModel,
    ):
        self.chain = chain
        self.scene = scene
        self.sessions: dict[str, SessionEntry] = {}
        self._counter = 0
        self._server: asyncio.AbstractServer | None = None

    # -- lifecycle --

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        self._server = await asyncio.start_server(self._handle_client, host, port)
        sock = self._server.sockets[0].getsockname()
        return sock[0], sock[1]

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    # -- framing --

    @staticmethod
    async def _read_envelope(reader: asyncio.StreamReader) -> dict | None:
        try:
            header = await reader.readexactly(HEADER_SIZE)
        except (asyncio.IncompleteReadError, ConnectionResetError):
            return None
        (length,) = struct.unpack(">I", header)
        if length > MAX_MESSAGE_SIZE:
            raise ProtocolError(f"message of {length} bytes exceeds limit")
        body = await reader.readexactly(length)
        try:
            envelope = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"malformed envelope: {exc}") from exc
        if not isinstance(envelope, dict):
            raise ProtocolError("envelope must be a JSON object")
        return envelope

    @staticmethod
    def _frame(obj: dict) -> bytes:
        body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
        return struct.pack(">I", len(body)) + body

    async def _send(self, writer: asyncio.StreamWriter, obj: dict) -> None:
        writer.write(self._frame(obj))
        await writer.drain()

    # -- client loop --

    async def _handle_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        try:
            while True:
                try:
                    envelope = await self._read_envelope(reader)
                except ProtocolError as exc:
                    await self._send(
                        writer,
                        {
                            "kind": "error",
                            "session_id": "",
                            "seq": -1,
                            "payload": {"code": "protocol", "message": str(exc)},
                        },
                    )
                    continue
                if envelope is None:
                    return
                await self._dispatch(envelope, writer)
        except (ConnectionResetError, BrokenPipeError):
            return
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError):
                pass

    async def _dispatch(self, envelope: dict, writer: asyncio.StreamWriter) -> None:
        kind = envelope.get("kind")
        session_id = envelope.get("session_id", "")
        seq = envelope.get("seq")
        payload = envelope.get("payload", {})
        if not isinstance(kind, str) or not isinstance(seq, int) or not isinstance(payload, dict):
            await self._send(
                writer,
                {
                    "kind": "error",
                    "session_id": session_id if isinstance(session_id, str) else "",
                    "seq": seq if isinstance(seq, int) else -1,
                    "payload": {"code": "protocol", "message": "envelope fields malformed"},
                },
            )
            return

        if kind == "create_session":
            self._counter += 1
            sid = f"s{self._counter:04d}"
            entry = SessionEntry(session=new_session(self.chain))
            entry.last_seq = seq
            self.sessions[sid] = entry
            await self._send(writer, {"kind": "ack", "session_id": sid, "seq": seq, "payload": {"session_id": sid}})
            await self._push_status(writer, sid, entry)
            return

        entry = self.sessions.get(session_id)
        if entry is None:
            await self._send(
                writer,
                {
                    "kind": "error",
                    "session_id": session_id,
                    "seq": seq,
                    "payload": {"code": "protocol", "message": f"unknown session {session_id!r}"},
                },
            )
            return

        async with entry.lock:
            if seq <= entry.last_seq:
                await self._send(
                    writer,
                    {
                        "kind": "error",
                        "session_id": session_id,
                        "seq": seq,
                        "payload": {
                            "code": "protocol",
                            "message": f"seq {seq} not after {entry.last_seq}",
                        },
                    },
                )
                await self._push_status(writer, session_id, entry)
                return
            entry.last_seq = seq
            try:
                ack_payload = await self._apply(entry, kind, payload)
                await self._send(
                    writer,
                    {"kind": "ack", "session_id": session_id, "seq": seq, "payload": ack_payload},
                )
            except ArmCollectError as exc:
                await self._send(
                    writer,
                    {
                        "kind": "error",
                        "session_id": session_id,
                        "seq": seq,
                        "payload": {"code": error_code(exc), "message": str(exc)},
                    },
                )
            await self._push_status(writer, session_id, entry)

    async def _push_status(self, writer, session_id: str, entry: SessionEntry) -> None:
        entry.event_seq += 1
        await self._send(
            writer,
            {
                "kind": "status",
                "session_id": session_id,
                "seq": entry.event_seq,
                "payload": session_status(entry, self.scene),
            },
        )

    # -- command semantics --

    async def _apply(self, entry: SessionEntry, kind: str, payload: dict) -> dict:
        loop = asyncio.get_running_loop()
        s = entry.session
        if kind == "propose_placement":
            entry.session = propose_placement(s, _vec(payload.get("point")))
            return {}
        if kind == "confirm_placement":
            entry.session = confirm_placement(s, self.scene)
            return {}
        if kind == "add_waypoint":
            pose = _pose_payload(payload)
            now = float(payload["time"]) if "time" in payload else None
            entry.session = add_waypoint(s, pose, camera=entry.last_camera, now=now)
            return {"waypoint_index": len(entry.session.waypoints) - 1}
        if kind == "revert":
            entry.session = revert_waypoint(s)
            return {"waypoints": len(entry.session.waypoints)}
        if kind == "toggle_gripper":
            now = float(payload["time"]) if "time" in payload else None
            entry.session = toggle_gripper(s, camera=entry.last_camera, now=now)
            return {"gripper": entry.session.gripper.value}
        if kind == "follow_begin":
            entry.follow_buffer = []
            return {}
        if kind == "follow_sample":
            t = float(payload.get("time", 0.0))
            entry.follow_buffer.append((t, _pose_payload(payload)))
            return {"buffered": len(entry.follow_buffer)}
        if kind == "follow_end":
            stream = entry.follow_buffer
            entry.follow_buffer = []
            entry.session = await loop.run_in_executor(
                None, lambda: follow_hand(s, stream, camera=entry.last_camera)
            )
            return {"waypoints": len(entry.session.waypoints)}
        if kind == "replay":
            rate = float(payload.get("rate_hz", 10.0))
            frames = await loop.run_in_executor(None, lambda: generate_replay(s, rate))
            return {
                "frames": [
                    {
                        "time": f.time,
                        "q": list(f.q),
                        "gripper": f.gripper.value,
                        "ghost": f.ghost,
                    }
                    for f in frames
                ]
            }
        if kind == "set_invisible":
            entry.session = set_invisible_robot(s, bool(payload.get("on", False)))
            return {"invisible_robot": entry.session.invisible_robot}
        if kind == "hand_update":
            hand = payload.get("hand")
            entry.last_hand = _vec(hand) if hand is not None else None
            cam = payload.get("camera")
            if cam is not None:
                entry.last_camera = _camera_payload(cam)
            gate = control_gate(
                s,
                entry.last_hand,
                entry.last_camera if entry.last_camera is not None else self.scene.extrinsics,
            )
            return {"gate": {"enabled": gate.enabled, "reason": gate.reason.value}}
        if kind == "capture":
            times = payload.get("times")
            if times is None:
                times = [wp.timestamp for wp in s.waypoints]
            task = str(payload.get("task", "untitled"))
            entry.captured = await loop.run_in_executor(
                None, lambda: record_mod.capture(s, self.scene, [float(t) for t in times], task)
            )
            return {
                "frames": len(entry.captured.frames),
                "keyframes": len(entry.captured.keyframes),
            }
        if kind == "export":
            if entry.captured is None:
                raise ProtocolError("nothing captured yet")
            path = payload.get("path")
            if not isinstance(path, str) or not path:
                raise ProtocolError("export needs a path")
            rec = entry.captured
            manifest = await loop.run_in_executor(None, lambda: record_mod.export(rec, path))
            return {"manifest": str(manifest)}
        raise ProtocolError(f"unknown command {kind!r}")


def serve(chain_path: str | Path, scene_path: str | Path, host: str, port: int) -> None:
    """Run the service until interrupted (CLI entry)."""
    chain = load_chain(chain_path)
    scene = load_scene(scene_path)

    async def main():
        server = GatewayServer(chain, scene)
        bound_host, bound_port = await server.start(host, port)
        print(f"listening on {bound_host}:{bound_port}", flush=True)
        try:
            await asyncio.Event().wait()
        finally:
            await server.stop()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
