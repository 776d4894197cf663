"""Demonstration record capture and bit-exact on-disk persistence.

Format "evr-1" layout:
    <dir>/manifest        structured text, SHA-256 per payload file
    <dir>/depth/NNNN.raw  little-endian float32 meters, row-major, no header
    <dir>/rgb/NNNN.ppm    binary PPM (P6, 8-bit)
    <dir>/keyframes.txt   one keyframe per line (see emit_keyframes)

No-hit depth pixels are stored as the largest finite float32 so the files
carry no infinities; they come back as +inf on import. Exports are
deterministic: exporting the same record twice is byte-identical.
"""
from __future__ import annotations

import hashlib
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    CorruptRecord,
    GateClosed,
    IoFailure,
    NoWaypoints,
    UnsupportedVersion,
)
from .geometry import Pose, UnitQuat, Vec3
from .scene import CameraIntrinsics, DepthImage, SceneModel, arm_primitives, render_depth, render_rgb
from .session import (
    CameraExtrinsics,
    CollectionSession,
    GateReason,
    GripperState,
    config_at_time,
    control_gate,
)

FORMAT_VERSION = "evr-1"
DEPTH_NO_HIT = float(np.finfo(np.float32).max)
ARM_LABEL_PREFIX = "arm"

GRIPPER_OPEN = 1
GRIPPER_CLOSED = 0


@dataclass(frozen=True)
class Keyframe:
    index: int
    time: float
    position: Vec3
    orientation: UnitQuat  # x, y, z, w
    gripper: int  # 1 = open, 0 = closed
    joint_config: tuple[float, ...]

    def __post_init__(self):
        if self.gripper not in (GRIPPER_OPEN, GRIPPER_CLOSED):
            raise ValueError("gripper must be 0 or 1")


@dataclass
class FrameCapture:
    time: float
    depth: DepthImage
    rgb: np.ndarray  # (h, w, 3) uint8
    extrinsics: CameraExtrinsics

    def __eq__(self, other):
        return (
            isinstance(other, FrameCapture)
            and self.time == other.time
            and self.depth == other.depth
            and np.array_equal(self.rgb, other.rgb)
            and self.extrinsics == other.extrinsics
        )


@dataclass
class DemonstrationRecord:
    task: str
    chain_hash: str
    scene_hash: str
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    base_pose: Pose
    frames: tuple[FrameCapture, ...]
    keyframes: tuple[Keyframe, ...]
    version: str = FORMAT_VERSION

    def __post_init__(self):
        if self.version != FORMAT_VERSION:
            raise UnsupportedVersion(f"unknown record version {self.version!r}")
        if "\n" in self.task:
            raise ValueError("task name must be a single line")
        for fc in self.frames:
            if (fc.depth.width, fc.depth.height) != (self.intrinsics.width, self.intrinsics.height):
                raise ValueError("frame dimensions do not match intrinsics")
            if fc.rgb.shape != (self.intrinsics.height, self.intrinsics.width, 3):
                raise ValueError("rgb dimensions do not match intrinsics")
        if self.frames and self.keyframes:
            last_frame_t = self.frames[-1].time
            if any(k.time < 0 or k.time > last_frame_t + 1e-9 for k in self.keyframes):
                raise ValueError("keyframe times must lie within [0, last frame time]")

    def __eq__(self, other):
        return (
            isinstance(other, DemonstrationRecord)
            and self.version == other.version
            and self.task == other.task
            and self.chain_hash == other.chain_hash
            and self.scene_hash == other.scene_hash
            and self.intrinsics == other.intrinsics
            and self.extrinsics == other.extrinsics
            and self.base_pose == other.base_pose
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
            and self.keyframes == other.keyframes
        )


# -- capture --------------------------------------------------------------------

def capture(
    session: CollectionSession,
    scene: SceneModel,
    capture_times: list[float],
    task: str = "untitled",
) -> DemonstrationRecord:
    """Render RGB-D frames at the saved camera and copy waypoints to keyframes.

    The camera never follows the live view: frames are always rendered at
    the extrinsics saved when the robot was placed, and capture refuses to
    run if the live camera has drifted past the consistency threshold.
    """
    if not session.waypoints:
        raise NoWaypoints("cannot capture a session without waypoints")
    gate = control_gate(session, None, scene.extrinsics)
    if not gate.enabled:
        raise GateClosed(gate.reason)
    if sorted(capture_times) != list(capture_times):
        raise ValueError("capture_times must be non-decreasing")
    if not capture_times:
        raise ValueError("capture_times must not be empty")
    for prim in scene.obstacles:
        if prim.label.startswith(f"{ARM_LABEL_PREFIX}:"):
            raise ValueError(f"obstacle label {prim.label!r} collides with arm markers")

    saved = session.saved_extrinsics
    cam_pose = Pose(saved.position, saved.orientation)
    frames = []
    for t in capture_times:
        q = config_at_time(session, t)
        posed = SceneModel(
            table=scene.table,
            obstacles=scene.obstacles
            + tuple(arm_primitives(session.chain, q, session.base_pose, ARM_LABEL_PREFIX)),
            intrinsics=scene.intrinsics,
            extrinsics=saved,
            source_sha256="-",  # throwaway composition, never hashed
        )
        frames.append(
            FrameCapture(
                time=float(t),
                depth=render_depth(posed, cam_pose),
                rgb=render_rgb(posed, cam_pose),
                extrinsics=saved,
            )
        )
    keyframes = tuple(
        Keyframe(
            index=wp.index,
            time=wp.timestamp,
            position=wp.target_pose.position,
            orientation=wp.target_pose.orientation,
            gripper=GRIPPER_OPEN if wp.gripper is GripperState.OPEN else GRIPPER_CLOSED,
            joint_config=tuple(wp.solved_q),
        )
        for wp in session.waypoints
    )
    return DemonstrationRecord(
        task=task,
        chain_hash=session.chain.source_sha256,
        scene_hash=scene.source_sha256,
        intrinsics=scene.intrinsics,
        extrinsics=saved,
        base_pose=session.base_pose,
        frames=tuple(frames),
        keyframes=keyframes,
    )


# -- keyframe stream --------------------------------------------------------------

def _fmt9(x: float) -> str:
    return f"{x:.9g}"


def emit_keyframes(record: DemonstrationRecord) -> str:
    """One keyframe per line: index time px py pz qx qy qz qw gripper."""
    lines = []
    for k in record.keyframes:
        p, o = k.position, k.orientation
        lines.append(
            f"{k.index} {k.time:.9f} {_fmt9(p.x)} {_fmt9(p.y)} {_fmt9(p.z)} "
            f"{_fmt9(o.x)} {_fmt9(o.y)} {_fmt9(o.z)} {_fmt9(o.w)} {k.gripper}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def parse_keyframe_stream(text: str) -> list[tuple]:
    """Inverse of emit_keyframes (positions/orientations to 9 digits)."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if len(fields) != 10:
            raise CorruptRecord(f"keyframe line {lineno}: expected 10 fields")
        out.append(
            (
                int(fields[0]),
                float(fields[1]),
                tuple(float(v) for v in fields[2:5]),
                tuple(float(v) for v in fields[5:9]),
                int(fields[9]),
            )
        )
    return out


# -- export / import ----------------------------------------------------------------

def _depth_bytes(depth: DepthImage) -> bytes:
    buf = np.where(np.isfinite(depth.depths), depth.depths, DEPTH_NO_HIT)
    return buf.astype("<f4").tobytes()


def _depth_from_bytes(raw: bytes, width: int, height: int) -> DepthImage:
    if len(raw) != width * height * 4:
        raise CorruptRecord("depth file size does not match image dimensions")
    arr = np.frombuffer(raw, dtype="<f4").reshape(height, width).astype(np.float32)
    arr = np.where(arr == np.float32(DEPTH_NO_HIT), np.float32(np.inf), arr)
    return DepthImage(width, height, arr)


def _ppm_bytes(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return b"P6\n%d %d\n255\n" % (w, h) + rgb.astype(np.uint8).tobytes()


def _rgb_from_ppm(raw: bytes, width: int, height: int) -> np.ndarray:
    header = b"P6\n%d %d\n255\n" % (width, height)
    if not raw.startswith(header):
        raise CorruptRecord("ppm header mismatch")
    body = raw[len(header):]
    if len(body) != width * height * 3:
        raise CorruptRecord("ppm payload size mismatch")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _pose_fields(p: Pose) -> str:
    return (
        f"{p.position.x!r} {p.position.y!r} {p.position.z!r} "
        f"{p.orientation.x!r} {p.orientation.y!r} {p.orientation.z!r} {p.orientation.w!r}"
    )


def export(record: DemonstrationRecord, directory: str | Path) -> Path:
    """Write the evr-1 layout atomically; returns the manifest path."""
    target = Path(directory)
    payloads: dict[str, bytes] = {}
    for i, fc in enumerate(record.frames):
        payloads[f"depth/{i:04d}.raw"] = _depth_bytes(fc.depth)
        payloads[f"rgb/{i:04d}.ppm"] = _ppm_bytes(fc.rgb)
    payloads["keyframes.txt"] = emit_keyframes(record).encode()

    intr = record.intrinsics
    ext = record.extrinsics
    lines = [
        f"format {record.version}",
        f"task {record.task}",
        f"chain_hash {record.chain_hash}",
        f"scene_hash {record.scene_hash}",
        f"intrinsics {intr.fx!r} {intr.fy!r} {intr.cx!r} {intr.cy!r} {intr.width} {intr.height}",
        f"extrinsics {_pose_fields(Pose(ext.position, ext.orientation))}",
        f"base {_pose_fields(record.base_pose)}",
        f"frame_count {len(record.frames)}",
        f"keyframe_count {len(record.keyframes)}",
    ]
    for i, fc in enumerate(record.frames):
        dname, rname = f"depth/{i:04d}.raw", f"rgb/{i:04d}.ppm"
        lines.append(
            f"frame {i} {fc.time!r} {dname} {_sha(payloads[dname])} "
            f"{rname} {_sha(payloads[rname])}"
        )
    for k in record.keyframes:
        p, o = k.position, k.orientation
        lines.append(
            f"keyframe {k.index} {k.time!r} {p.x!r} {p.y!r} {p.z!r} "
            f"{o.x!r} {o.y!r} {o.z!r} {o.w!r} {k.gripper} q "
            + " ".join(repr(a) for a in k.joint_config)
        )
    lines.append(f"file keyframes.txt {_sha(payloads['keyframes.txt'])}")
    head = "\n".join(lines) + "\n"
    manifest = head + f"manifest_sha {_sha(head.encode())}\n"

    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryDirectory(dir=target.parent, prefix=".evr-") as tmp:
            root = Path(tmp) / "record"
            (root / "depth").mkdir(parents=True)
            (root / "rgb").mkdir()
            for rel, data in payloads.items():
                (root / rel).write_bytes(data)
            (root / "manifest").write_text(manifest)
            if target.exists():
                shutil.rmtree(target)
            os.replace(root, target)
    except OSError as exc:
        raise IoFailure(f"export to {target} failed: {exc}") from exc
    return target / "manifest"


def session_from_keyframes(chain, record: DemonstrationRecord) -> CollectionSession:
    """Rebuild a replayable session straight from a record's keyframes.

    No IK is re-run: stored joint configs are trusted, and segments are
    config-space lines between consecutive keyframes.
    """
    from .kinematics import forward_kinematics
    from .geometry import pose_compose
    from .session import PathSegment, SessionState, Waypoint

    if chain.source_sha256 != record.chain_hash:
        raise ConfigError(
            "chain config hash does not match the record "
            f"({chain.source_sha256[:12]} vs {record.chain_hash[:12]})"
        )
    if not record.keyframes:
        raise NoWaypoints("record has no keyframes")
    lo, hi = chain.limits.min_angles, chain.limits.max_angles
    waypoints = []
    segments = []
    prev_t = -float("inf")
    for k in record.keyframes:
        if len(k.joint_config) != chain.n_joints:
            raise CorruptRecord(f"keyframe {k.index}: joint config length mismatch")
        if any(not lo_i <= a <= hi_i for a, lo_i, hi_i in zip(k.joint_config, lo, hi)):
            raise CorruptRecord(f"keyframe {k.index}: joint config violates limits")
        if k.time <= prev_t:
            raise CorruptRecord(f"keyframe {k.index}: timestamps must increase")
        prev_t = k.time
        waypoints.append(
            Waypoint(
                index=k.index,
                target_pose=Pose(k.position, k.orientation),
                gripper=GripperState.OPEN if k.gripper == GRIPPER_OPEN else GripperState.CLOSED,
                solved_q=k.joint_config,
                timestamp=k.time,
            )
        )
    for a, b in zip(waypoints, waypoints[1:]):
        pa = pose_compose(record.base_pose, forward_kinematics(chain, a.solved_q)).position
        pb = pose_compose(record.base_pose, forward_kinematics(chain, b.solved_q)).position
        segments.append(
            PathSegment(
                from_index=a.index,
                to_index=b.index,
                positions=(pa, pb),
                configs=(a.solved_q, b.solved_q),
            )
        )
    return CollectionSession(
        chain=chain,
        state=SessionState.COLLECTING,
        base_pose=record.base_pose,
        current_q=waypoints[-1].solved_q,
        gripper=waypoints[-1].gripper,
        waypoints=tuple(waypoints),
        segments=tuple(segments),
        saved_extrinsics=record.extrinsics,
        clock=waypoints[-1].timestamp,
    )


def import_record(directory: str | Path) -> DemonstrationRecord:
    """Read and fully validate an evr-1 directory."""
    root = Path(directory)
    manifest_path = root / "manifest"
    try:
        text = manifest_path.read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read manifest in {root}: {exc}") from exc

    # version gate first: other formats are rejected, not misdiagnosed
    first = text.split("\n", 1)[0]
    if not first.startswith("format "):
        raise CorruptRecord("manifest must start with a format line")
    if first[len("format "):] != FORMAT_VERSION:
        raise UnsupportedVersion(f"unsupported record version {first[len('format '):]!r}")

    # the trailing manifest_sha line guards the manifest's own bytes
    head, _, tail = text.rpartition("manifest_sha ")
    if not head or not tail.endswith("\n"):
        raise CorruptRecord("manifest missing its integrity line")
    if _sha(head.encode()) != tail.strip():
        raise CorruptRecord("manifest integrity check failed")
    text = head

    fields: dict[str, str] = {}
    frame_rows: list[list[str]] = []
    keyframe_rows: list[list[str]] = []
    file_rows: list[list[str]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            raise CorruptRecord(f"manifest line {lineno}: blank line")
        key, _, rest = line.partition(" ")
        if key == "frame":
            frame_rows.append(rest.split())
        elif key == "keyframe":
            keyframe_rows.append(rest.split())
        elif key == "file":
            file_rows.append(rest.split())
        elif key in ("format", "task", "chain_hash", "scene_hash", "intrinsics", "extrinsics", "base", "frame_count", "keyframe_count"):
            if key in fields:
                raise CorruptRecord(f"manifest line {lineno}: duplicate {key}")
            fields[key] = rest
        else:
            raise CorruptRecord(f"manifest line {lineno}: unknown entry {key!r}")

    if fields.get("format") != FORMAT_VERSION:
        raise UnsupportedVersion(f"unsupported record version {fields.get('format')!r}")
    for req in ("task", "chain_hash", "scene_hash", "intrinsics", "extrinsics", "base", "frame_count", "keyframe_count"):
        if req not in fields:
            raise CorruptRecord(f"manifest missing {req}")

    def parse_pose(tokens: list[str]) -> Pose:
        v = [float(x) for x in tokens]
        if len(v) != 7:
            raise CorruptRecord("pose entry needs 7 numbers")
        try:
            # bytes are authoritative: accept the stored floats exactly
            return Pose(Vec3(v[0], v[1], v[2]), UnitQuat(v[3], v[4], v[5], v[6]))
        except ValueError as exc:
            raise CorruptRecord(f"invalid pose in manifest: {exc}") from exc

    try:
        iv = fields["intrinsics"].split()
        intr = CameraIntrinsics(float(iv[0]), float(iv[1]), float(iv[2]), float(iv[3]), int(iv[4]), int(iv[5]))
        ext_pose = parse_pose(fields["extrinsics"].split())
        extrinsics = CameraExtrinsics(ext_pose.position, ext_pose.orientation)
        base_pose = parse_pose(fields["base"].split())
        frame_count = int(fields["frame_count"])
        keyframe_count = int(fields["keyframe_count"])
    except (ValueError, IndexError) as exc:
        raise CorruptRecord(f"malformed manifest header: {exc}") from exc

    if len(frame_rows) != frame_count:
        raise CorruptRecord("frame_count does not match frame entries")
    if len(keyframe_rows) != keyframe_count:
        raise CorruptRecord("keyframe_count does not match keyframe entries")

    def read_checked(rel: str, want_sha: str) -> bytes:
        try:
            data = (root / rel).read_bytes()
        except OSError as exc:
            raise CorruptRecord(f"missing payload file {rel}") from exc
        if _sha(data) != want_sha:
            raise CorruptRecord(f"checksum mismatch in {rel}")
        return data

    frames = []
    for row in frame_rows:
        if len(row) != 6:
            raise CorruptRecord("malformed frame entry")
        _, t, dname, dsha, rname, rsha = row
        depth = _depth_from_bytes(read_checked(dname, dsha), intr.width, intr.height)
        rgb = _rgb_from_ppm(read_checked(rname, rsha), intr.width, intr.height)
        frames.append(FrameCapture(float(t), depth, rgb, extrinsics))

    keyframes = []
    for row in keyframe_rows:
        try:
            qpos = row.index("q")
        except ValueError as exc:
            raise CorruptRecord("keyframe entry missing joint config") from exc
        head = row[:qpos]
        joints = tuple(float(a) for a in row[qpos + 1:])
        if len(head) != 10:
            raise CorruptRecord("malformed keyframe entry")
        try:
            orientation = UnitQuat(float(head[5]), float(head[6]), float(head[7]), float(head[8]))
        except ValueError as exc:
            raise CorruptRecord(f"invalid keyframe orientation: {exc}") from exc
        keyframes.append(
            Keyframe(
                index=int(head[0]),
                time=float(head[1]),
                position=Vec3(float(head[2]), float(head[3]), float(head[4])),
                orientation=orientation,
                gripper=int(head[9]),
                joint_config=joints,
            )
        )

    if len(file_rows) != 1 or file_rows[0][0] != "keyframes.txt":
        raise CorruptRecord("manifest must list exactly the keyframes.txt payload")
    stream = read_checked("keyframes.txt", file_rows[0][1])

    record = DemonstrationRecord(
        task=fields["task"],
        chain_hash=fields["chain_hash"],
        scene_hash=fields["scene_hash"],
        intrinsics=intr,
        extrinsics=extrinsics,
        base_pose=base_pose,
        frames=tuple(frames),
        keyframes=tuple(keyframes),
    )
    if emit_keyframes(record).encode() != stream:
        raise CorruptRecord("keyframes.txt does not match manifest keyframes")
    return record
