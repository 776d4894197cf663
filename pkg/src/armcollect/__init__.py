"""Headless robot demonstration collection engine.

Guide a simulated 7-DoF arm through waypoints, inspect and revert the
path history, verify collision-free replays, and export RGB-D + keyframe
demonstration records.
"""

from .errors import (
    ArmCollectError,
    ConfigError,
    CorruptRecord,
    DimensionMismatch,
    EmptyStream,
    GateClosed,
    IkFailed,
    InvalidState,
    IoFailure,
    NotConverged,
    NothingToRevert,
    NoWaypoints,
    PointBelowPlane,
    ProtocolError,
    UnsupportedVersion,
)
from .geometry import Pose, UnitQuat, Vec3
from .kinematics import (
    IkParams,
    IkResult,
    Joint,
    JointLimits,
    KinematicChain,
    clamp_to_limits,
    default_chain,
    forward_kinematics,
    is_reachable,
    jacobian,
    load_chain,
    solve_ik_dls,
)
from .record import (
    DemonstrationRecord,
    FrameCapture,
    Keyframe,
    capture,
    emit_keyframes,
    export,
    import_record,
    session_from_keyframes,
)
from .scene import (
    Box,
    CameraIntrinsics,
    CollisionReport,
    Cylinder,
    DepthImage,
    LinkCapsule,
    SceneModel,
    Sphere,
    TablePlane,
    audit_replay,
    check_collision,
    link_capsules,
    load_scene,
    render_depth,
    render_rgb,
)
from .session import (
    CameraExtrinsics,
    CollectionSession,
    ControlAvailability,
    GateReason,
    GripperState,
    PathSegment,
    ReplayFrame,
    SessionState,
    Waypoint,
    add_waypoint,
    confirm_placement,
    control_gate,
    follow_hand,
    generate_replay,
    interpolate_linear,
    new_session,
    project_shadow,
    propose_placement,
    revert_waypoint,
    set_invisible_robot,
    toggle_gripper,
)

__version__ = "0.1.0"
