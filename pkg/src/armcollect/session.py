"""Collection session state machine.

Sessions are immutable: every mutating operation returns a new session, so
history algebra (add k waypoints, revert k times, land exactly on the
post-confirm state) holds by construction, field for field. Times are
session-relative seconds supplied by the caller (the gateway), never
wall-clock, which keeps replays and exported records deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import (
    EmptyStream,
    GateClosed,
    IkFailed,
    InvalidState,
    NotConverged,
    NothingToRevert,
    NoWaypoints,
    PointBelowPlane,
)
from .geometry import (
    Pose,
    UnitQuat,
    Vec3,
    pose_compose,
    pose_inverse,
    quat_rotate,
    quat_slerp,
    rotation_between,
)
from .kinematics import (
    IkParams,
    JointConfig,
    KinematicChain,
    forward_kinematics,
    is_reachable,
    solve_ik_dls,
)

# "20 waypoints": resample count for hand-following trajectories.
FOLLOW_RESAMPLE_COUNT = 20
# IK budget per follow-mode sample; small so the arm trails the hand.
FOLLOW_IK_ITERS = 5
# Default camera-consistency thresholds: 2 cm, 5 degrees.
DEFAULT_TRANS_THRESHOLD = 0.02
DEFAULT_ROT_THRESHOLD = math.radians(5.0)
# Mutating operations stamp this far apart when the caller gives no time.
DEFAULT_TICK = 1.0


class GripperState(Enum):
    OPEN = "open"
    CLOSED = "closed"

    @property
    def color(self) -> str:
        """Operator-facing signal color: green = open, red = closed."""
        return "green" if self is GripperState.OPEN else "red"

    def toggled(self) -> "GripperState":
        return GripperState.CLOSED if self is GripperState.OPEN else GripperState.OPEN


class SessionState(Enum):
    AWAITING_PLACEMENT = "awaiting_placement"
    PLACEMENT_PROPOSED = "placement_proposed"
    COLLECTING = "collecting"
    FOLLOW_MODE = "follow_mode"
    REPLAYING = "replaying"


class GateReason(Enum):
    OK = "ok"
    HAND_UNREACHABLE = "hand_unreachable"
    CAMERA_MOVED = "camera_moved"
    NO_ROBOT = "no_robot"


@dataclass(frozen=True)
class ControlAvailability:
    enabled: bool
    reason: GateReason

    def __post_init__(self):
        if self.enabled and self.reason is not GateReason.OK:
            raise ValueError("enabled gate must carry reason OK")


@dataclass(frozen=True)
class CameraExtrinsics:
    position: Vec3
    orientation: UnitQuat


@dataclass(frozen=True)
class Waypoint:
    index: int
    target_pose: Pose
    gripper: GripperState
    solved_q: JointConfig
    timestamp: float


@dataclass(frozen=True)
class PathSegment:
    """End-effector polyline (and matching configs) between two waypoints."""

    from_index: int
    to_index: int
    positions: tuple[Vec3, ...]
    configs: tuple[JointConfig, ...]


@dataclass(frozen=True)
class ShadowRect:
    """Table-plane footprint marker under the operator's hand."""

    center: Vec3
    length: float
    width: float
    heading: float


@dataclass(frozen=True)
class ReplayFrame:
    time: float
    q: JointConfig
    gripper: GripperState
    ghost: bool = True  # rendered semi-transparent


@dataclass(frozen=True)
class CollectionSession:
    chain: KinematicChain
    state: SessionState = SessionState.AWAITING_PLACEMENT
    candidate: Vec3 | None = None
    base_pose: Pose = Pose.identity()
    current_q: JointConfig = ()
    gripper: GripperState = GripperState.OPEN
    waypoints: tuple[Waypoint, ...] = ()
    segments: tuple[PathSegment, ...] = ()
    saved_extrinsics: CameraExtrinsics | None = None
    trans_threshold: float = DEFAULT_TRANS_THRESHOLD
    rot_threshold: float = DEFAULT_ROT_THRESHOLD
    invisible_robot: bool = False
    clock: float = 0.0


def new_session(
    chain: KinematicChain,
    trans_threshold: float = DEFAULT_TRANS_THRESHOLD,
    rot_threshold: float = DEFAULT_ROT_THRESHOLD,
) -> CollectionSession:
    return CollectionSession(
        chain=chain,
        current_q=chain.home,
        trans_threshold=trans_threshold,
        rot_threshold=rot_threshold,
    )


def tool_down_orientation() -> UnitQuat:
    """Gripper facing the table: tool +z rotated onto world -z."""
    return UnitQuat(1.0, 0.0, 0.0, 0.0)


# -- placement ----------------------------------------------------------------

def propose_placement(session: CollectionSession, candidate: Vec3) -> CollectionSession:
    """Stage (or restage) the spawn marker; repeated calls overwrite it."""
    if session.state not in (SessionState.AWAITING_PLACEMENT, SessionState.PLACEMENT_PROPOSED):
        raise InvalidState(f"cannot propose placement while {session.state.value}")
    return replace(session, state=SessionState.PLACEMENT_PROPOSED, candidate=candidate)


def confirm_placement(session: CollectionSession, scene) -> CollectionSession:
    """Spawn the arm at the staged marker, snapped onto the table plane.

    The camera extrinsics at this instant become the saved reference for
    the consistency gate, and collection starts from the home config.
    """
    if session.state is not SessionState.PLACEMENT_PROPOSED:
        raise InvalidState(f"cannot confirm placement while {session.state.value}")
    n = scene.table.normal.as_array()
    p0 = scene.table.point.as_array()
    c = session.candidate.as_array()
    snapped = c - float((c - p0) @ n) * n
    base = Pose(Vec3.from_array(snapped), _plane_aligned_orientation(n))
    return replace(
        session,
        state=SessionState.COLLECTING,
        candidate=None,
        base_pose=base,
        current_q=session.chain.home,
        gripper=GripperState.OPEN,
        waypoints=(),
        segments=(),
        saved_extrinsics=scene.extrinsics,
        clock=0.0,
    )


def _plane_aligned_orientation(normal: np.ndarray) -> UnitQuat:
    """Zero-yaw orientation with local +z along the plane normal."""
    z = np.array([0.0, 0.0, 1.0])
    c = float(np.clip(z @ normal, -1.0, 1.0))
    if c > 1.0 - 1e-12:
        return UnitQuat.identity()
    axis = np.cross(z, normal)
    n = np.linalg.norm(axis)
    if n < 1e-12:  # plane upside down: flip about x
        return UnitQuat(1.0, 0.0, 0.0, 0.0)
    axis = axis / n
    half = 0.5 * math.acos(c)
    s = math.sin(half)
    return UnitQuat.normalized(axis[0] * s, axis[1] * s, axis[2] * s, math.cos(half))


# -- control gate ---------------------------------------------------------------

def control_gate(
    session: CollectionSession,
    hand_point: Vec3 | None,
    camera: CameraExtrinsics,
) -> ControlAvailability:
    """Pure availability check, priority: NoRobot > CameraMoved > HandUnreachable."""
    return _gate(session, session.state, hand_point, camera)


def _gate(session, state, hand_point, camera) -> ControlAvailability:
    if state not in (SessionState.COLLECTING, SessionState.FOLLOW_MODE):
        return ControlAvailability(False, GateReason.NO_ROBOT)
    saved = session.saved_extrinsics
    if camera is not None and saved is not None:
        dt = float(
            np.linalg.norm(camera.position.as_array() - saved.position.as_array())
        )
        da = rotation_between(saved.orientation, camera.orientation)
        # closed interval: exactly at the threshold is still consistent
        if dt > session.trans_threshold or da > session.rot_threshold:
            return ControlAvailability(False, GateReason.CAMERA_MOVED)
    if hand_point is not None and not is_reachable(session.chain, session.base_pose, hand_point):
        return ControlAvailability(False, GateReason.HAND_UNREACHABLE)
    return ControlAvailability(True, GateReason.OK)


def _require_open_gate(session, state, hand_point, camera):
    gate = _gate(session, state, hand_point, camera if camera is not None else session.saved_extrinsics)
    if not gate.enabled:
        raise GateClosed(gate.reason)


# -- waypoint capture -----------------------------------------------------------

def add_waypoint(
    session: CollectionSession,
    target: Pose,
    camera: CameraExtrinsics | None = None,
    now: float | None = None,
) -> CollectionSession:
    """Solve IK for the target, append the waypoint and its path segment.

    The session is unchanged if the gate is closed or IK fails.
    """
    _require_open_gate(session, session.state, target.position, camera)
    return _append_waypoint(session, target, now)


def _append_waypoint(
    session: CollectionSession, target: Pose, now: float | None
) -> CollectionSession:
    local_target = pose_compose(pose_inverse(session.base_pose), target)
    try:
        result = solve_ik_dls(session.chain, session.current_q, local_target)
    except NotConverged as exc:
        raise IkFailed(f"waypoint IK failed: {exc}") from exc
    stamp = _next_stamp(session, now)
    wp = Waypoint(
        index=len(session.waypoints),
        target_pose=target,
        gripper=session.gripper,
        solved_q=result.q,
        timestamp=stamp,
    )
    segments = session.segments
    if session.waypoints:
        start_world = _to_world(session.base_pose, forward_kinematics(session.chain, session.current_q).position)
        positions = [_to_world(session.base_pose, p) for p in result.trace_positions]
        configs = list(result.trace_configs)
        if _dist(positions[0], start_world) > 1e-12:
            # IK retried from a ladder seed: anchor the polyline at the
            # session's actual start so segment endpoints stay exact
            positions.insert(0, start_world)
            configs.insert(0, tuple(session.current_q))
        seg = PathSegment(
            from_index=session.waypoints[-1].index,
            to_index=wp.index,
            positions=tuple(positions),
            configs=tuple(configs),
        )
        segments = segments + (seg,)
    return replace(
        session,
        waypoints=session.waypoints + (wp,),
        segments=segments,
        current_q=result.q,
        clock=stamp,
    )


def _next_stamp(session: CollectionSession, now: float | None) -> float:
    if now is None:
        return session.clock + DEFAULT_TICK
    if now <= session.clock:
        raise ValueError(f"timestamp {now} not after session clock {session.clock}")
    return float(now)


def _to_world(base: Pose, p: Vec3) -> Vec3:
    return Vec3.from_array(
        base.position.as_array() + quat_rotate(base.orientation.as_array(), p.as_array())
    )


def _dist(a: Vec3, b: Vec3) -> float:
    return float(np.linalg.norm(a.as_array() - b.as_array()))


def revert_waypoint(session: CollectionSession) -> CollectionSession:
    """Pop the last waypoint and its segment; arm, gripper, and clock rewind."""
    if session.state is not SessionState.COLLECTING:
        raise InvalidState(f"cannot revert while {session.state.value}")
    if not session.waypoints:
        raise NothingToRevert("no waypoints to revert")
    waypoints = session.waypoints[:-1]
    segments = session.segments[:-1] if session.segments else session.segments
    if waypoints:
        last = waypoints[-1]
        return replace(
            session,
            waypoints=waypoints,
            segments=segments,
            current_q=last.solved_q,
            gripper=last.gripper,
            clock=last.timestamp,
        )
    return replace(
        session,
        waypoints=(),
        segments=(),
        current_q=session.chain.home,
        gripper=GripperState.OPEN,
        clock=0.0,
    )


def toggle_gripper(
    session: CollectionSession,
    camera: CameraExtrinsics | None = None,
    now: float | None = None,
) -> CollectionSession:
    """Flip the gripper and record it as a keyframe at the current pose."""
    _require_open_gate(session, session.state, None, camera)
    flipped = session.gripper.toggled()
    pose_world = pose_compose(
        session.base_pose, forward_kinematics(session.chain, session.current_q)
    )
    stamp = _next_stamp(session, now)
    wp = Waypoint(
        index=len(session.waypoints),
        target_pose=pose_world,
        gripper=flipped,
        solved_q=tuple(session.current_q),
        timestamp=stamp,
    )
    segments = session.segments
    if session.waypoints:
        here = pose_world.position
        seg = PathSegment(
            from_index=session.waypoints[-1].index,
            to_index=wp.index,
            positions=(here, here),
            configs=(tuple(session.current_q), tuple(session.current_q)),
        )
        segments = segments + (seg,)
    return replace(
        session,
        gripper=flipped,
        waypoints=session.waypoints + (wp,),
        segments=segments,
        clock=stamp,
    )


# -- hand following -------------------------------------------------------------

def interpolate_linear(a: Vec3, b: Vec3, n: int) -> list[Vec3]:
    """n points from a to b, excluding a, including b."""
    if n < 1:
        raise ValueError("n must be >= 1")
    av, bv = a.as_array(), b.as_array()
    return [Vec3.from_array(av + (i / n) * (bv - av)) for i in range(1, n + 1)]


def follow_hand(
    session: CollectionSession,
    pose_stream,
    camera: CameraExtrinsics | None = None,
    ik_iters: int = FOLLOW_IK_ITERS,
) -> CollectionSession:
    """Trail the hand pose stream, then bake the path into 20 waypoints.

    Per sample the arm takes one bounded IK step toward the sample pose
    (so it lags like a real-time tracker); gate-closed or out-of-order
    samples are skipped. On stream end the recorded path is resampled
    uniformly in arc length into exactly FOLLOW_RESAMPLE_COUNT waypoints.
    """
    if session.state is not SessionState.COLLECTING:
        raise InvalidState(f"cannot follow while {session.state.value}")
    trail_params = IkParams(max_iters=max(1, ik_iters))
    q = session.current_q
    last_t = session.clock
    recorded: list[tuple[float, Pose]] = []
    base_inv = pose_inverse(session.base_pose)
    for t, pose in pose_stream:
        if t <= last_t:
            continue
        gate = _gate(
            session, SessionState.FOLLOW_MODE, pose.position,
            camera if camera is not None else session.saved_extrinsics,
        )
        if not gate.enabled:
            continue
        local = pose_compose(base_inv, pose)
        try:
            step = solve_ik_dls(session.chain, q, local, trail_params)
            q = step.q
        except NotConverged as exc:
            q = exc.best_q
        achieved = pose_compose(session.base_pose, forward_kinematics(session.chain, q))
        recorded.append((float(t), achieved))
        last_t = float(t)
    if not recorded:
        raise EmptyStream("no usable follow samples")

    out = session
    for t, pose in _resample_path(recorded, FOLLOW_RESAMPLE_COUNT, session.clock):
        out = _append_follow_waypoint(out, pose, t)
    return out


def _append_follow_waypoint(session, target, stamp):
    # targets lie on the just-traversed path, so the solve is local; if the
    # solver still refuses, snap the waypoint to the achieved pose so the
    # waypoint invariant (FK within tolerance of target) always holds
    try:
        return _append_waypoint(session, target, stamp)
    except IkFailed:
        achieved = pose_compose(
            session.base_pose, forward_kinematics(session.chain, session.current_q)
        )
        return _append_waypoint(session, achieved, stamp)


def _resample_path(
    recorded: list[tuple[float, Pose]], count: int, clock: float
) -> list[tuple[float, Pose]]:
    """count samples uniform in arc length, with interpolated timestamps."""
    times = [t for t, _ in recorded]
    poses = [p for _, p in recorded]
    pts = np.array([p.position.as_array() for p in poses])
    seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1) if len(pts) > 1 else np.array([])
    total = float(seg_len.sum())

    out = []
    prev_t = clock
    for i in range(1, count + 1):
        frac = i / count
        if total < 1e-12:
            # degenerate path: fall back to uniform-in-sample-index
            x = frac * (len(poses) - 1)
            k = min(int(x), len(poses) - 2) if len(poses) > 1 else 0
            u = x - k if len(poses) > 1 else 0.0
        else:
            s = frac * total
            cum = np.concatenate([[0.0], np.cumsum(seg_len)])
            k = int(np.searchsorted(cum, s, side="right") - 1)
            k = min(k, len(seg_len) - 1)
            span = seg_len[k]
            u = (s - cum[k]) / span if span > 1e-15 else 1.0
        if len(poses) == 1:
            pose, t = poses[0], times[0]
        else:
            pa, pb = poses[k], poses[k + 1]
            pos = Vec3.from_array(
                (1 - u) * pa.position.as_array() + u * pb.position.as_array()
            )
            ori = UnitQuat.from_array(
                quat_slerp(pa.orientation.as_array(), pb.orientation.as_array(), u)
            )
            pose = Pose(pos, ori)
            t = (1 - u) * times[k] + u * times[k + 1]
        if t <= prev_t:
            t = prev_t + 1e-6  # keep stamps strictly increasing
        out.append((t, pose))
        prev_t = t
    return out


# -- shadow / replay / presentation ----------------------------------------------

def project_shadow(session: CollectionSession, point: Vec3, table_plane) -> ShadowRect:
    """Orthogonal drop of the hand point onto the table, sized like the tool."""
    n = table_plane.normal.as_array()
    p0 = table_plane.point.as_array()
    p = point.as_array()
    height = float((p - p0) @ n)
    if height <= 0:
        raise PointBelowPlane(f"point {point} is below the table plane")
    center = p - height * n
    length, width = session.chain.end_effector_dims
    heading = _ee_heading(session, n)
    return ShadowRect(Vec3.from_array(center), length, width, heading)


def _ee_heading(session: CollectionSession, normal: np.ndarray) -> float:
    """Yaw of the tool's x-axis projected onto the plane."""
    pose = pose_compose(session.base_pose, forward_kinematics(session.chain, session.current_q))
    x_axis = quat_rotate(pose.orientation.as_array(), np.array([1.0, 0.0, 0.0]))
    proj = x_axis - float(x_axis @ normal) * normal
    if float(proj @ proj) < 1e-12:
        return 0.0
    # in-plane basis: world x projected (or y when degenerate)
    ex = np.array([1.0, 0.0, 0.0]) - normal[0] * normal
    if float(ex @ ex) < 1e-12:
        ex = np.array([0.0, 1.0, 0.0]) - normal[1] * normal
    ex = ex / np.linalg.norm(ex)
    ey = np.cross(normal, ex)
    return math.atan2(float(proj @ ey), float(proj @ ex))


def generate_replay(session: CollectionSession, rate_hz: float) -> list[ReplayFrame]:
    """Sample the stored path history into ghost frames at rate_hz.

    Deterministic: equal sessions give identical frame lists. The session
    itself is untouched (replay is an atomic read).
    """
    if session.state is not SessionState.COLLECTING:
        raise InvalidState(f"cannot replay while {session.state.value}")
    if not session.waypoints:
        raise NoWaypoints("nothing to replay")
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    t0 = session.waypoints[0].timestamp
    t_end = session.waypoints[-1].timestamp
    times = []
    k = 0
    while True:
        t = t0 + k / rate_hz
        if t > t_end + 1e-12:
            break
        times.append(t)
        k += 1
    if not times or abs(times[-1] - t_end) > 1e-9:
        times.append(t_end)
    return [
        ReplayFrame(time=t, q=config_at_time(session, t), gripper=gripper_at_time(session, t))
        for t in times
    ]


def config_at_time(session: CollectionSession, t: float) -> JointConfig:
    """Replay interpolation: walk the segment solver traces."""
    wps = session.waypoints
    if not wps:
        raise NoWaypoints("session has no waypoints")
    if t <= wps[0].timestamp:
        return wps[0].solved_q
    if t >= wps[-1].timestamp:
        return wps[-1].solved_q
    for i in range(len(wps) - 1):
        ta, tb = wps[i].timestamp, wps[i + 1].timestamp
        if ta <= t <= tb:
            seg = session.segments[i]
            span = tb - ta
            u = (t - ta) / span if span > 0 else 1.0
            cfgs = seg.configs
            x = u * (len(cfgs) - 1)
            k = min(int(x), len(cfgs) - 2)
            frac = x - k
            qa = np.array(cfgs[k])
            qb = np.array(cfgs[k + 1])
            return tuple(((1 - frac) * qa + frac * qb).tolist())
    return wps[-1].solved_q


def gripper_at_time(session: CollectionSession, t: float) -> GripperState:
    """Step function: state of the last keyframe at or before t."""
    state = session.waypoints[0].gripper if session.waypoints else session.gripper
    for wp in session.waypoints:
        if wp.timestamp <= t + 1e-12:
            state = wp.gripper
        else:
            break
    return state


def set_invisible_robot(session: CollectionSession, on: bool) -> CollectionSession:
    """Presentation-only flag; never touches waypoints, segments, or configs."""
    return replace(session, invisible_robot=bool(on))


def end_effector_pose(session: CollectionSession) -> Pose:
    """Current world-frame tool pose."""
    return pose_compose(session.base_pose, forward_kinematics(session.chain, session.current_q))
