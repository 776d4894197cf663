"""Rigid-body geometry primitives: vectors, unit quaternions, poses.

Quaternions are stored (x, y, z, w), Hamilton convention, and describe
active rotations; composing ``a * b`` applies ``b`` first, then ``a``.
All producing operations renormalize so unit norm holds to 1e-9.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Vec3:
    """A point or direction in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        # coerce so repr-based serialization is stable for int inputs
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite vector component: {(self.x, self.y, self.z)}")

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True)
class UnitQuat:
    """Unit quaternion (x, y, z, w)."""

    x: float
    y: float
    z: float
    w: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "w", float(self.w))
        n = math.sqrt(self.x**2 + self.y**2 + self.z**2 + self.w**2)
        if abs(n - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"quaternion norm {n!r} is not unit")

    @staticmethod
    def identity() -> "UnitQuat":
        return UnitQuat(0.0, 0.0, 0.0, 1.0)

    @staticmethod
    def normalized(x: float, y: float, z: float, w: float) -> "UnitQuat":
        n = math.sqrt(x * x + y * y + z * z + w * w)
        if n == 0.0 or not math.isfinite(n):
            raise ValueError("cannot normalize zero or non-finite quaternion")
        return UnitQuat(x / n, y / n, z / n, w / n)

    @staticmethod
    def from_array(a) -> "UnitQuat":
        return UnitQuat.normalized(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w], dtype=float)


@dataclass(frozen=True)
class Pose:
    """Position plus orientation of a rigid frame."""

    position: Vec3
    orientation: UnitQuat

    @staticmethod
    def identity() -> "Pose":
        return Pose(Vec3(0.0, 0.0, 0.0), UnitQuat.identity())

    @staticmethod
    def from_arrays(p, q) -> "Pose":
        return Pose(Vec3.from_array(p), UnitQuat.from_array(q))


# -- array-level quaternion kernels (used in hot loops) ----------------------

def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b for (x, y, z, w) arrays."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(q @ q))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by quaternion q."""
    u = q[:3]
    w = q[3]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    half = 0.5 * angle
    s = math.sin(half)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, math.cos(half)])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Axis-angle vector of q, shortest arc (w is forced >= 0)."""
    if q[3] < 0.0:
        q = -q
    vn = math.sqrt(float(q[:3] @ q[:3]))
    if vn < 1e-12:
        return 2.0 * q[:3]  # small-angle limit
    angle = 2.0 * math.atan2(vn, float(q[3]))
    return q[:3] * (angle / vn)


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle of q, in [0, pi]."""
    vn = math.sqrt(float(q[:3] @ q[:3]))
    return 2.0 * math.atan2(vn, abs(float(q[3])))


def quat_slerp(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    """Spherical interpolation from a (u=0) to b (u=1), shortest arc."""
    dot = float(a @ b)
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(a + u * (b - a))
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    return quat_normalize((math.sin((1.0 - u) * theta) / s) * a + (math.sin(u * theta) / s) * b)


# -- pose composition ---------------------------------------------------------

def pose_compose(a: Pose, b: Pose) -> Pose:
    """Frame composition: the pose of b expressed through a."""
    qa = a.orientation.as_array()
    p = a.position.as_array() + quat_rotate(qa, b.position.as_array())
    q = quat_normalize(quat_mul(qa, b.orientation.as_array()))
    return Pose(Vec3.from_array(p), UnitQuat.from_array(q))


def pose_inverse(a: Pose) -> Pose:
    qi = quat_conj(a.orientation.as_array())
    p = -quat_rotate(qi, a.position.as_array())
    return Pose(Vec3.from_array(p), UnitQuat.from_array(quat_normalize(qi)))


def pose_error(target: Pose, current: Pose) -> tuple[np.ndarray, np.ndarray]:
    """(position error, orientation error as a rotation vector), world frame."""
    dp = target.position.as_array() - current.position.as_array()
    q_rel = quat_mul(target.orientation.as_array(), quat_conj(current.orientation.as_array()))
    return dp, quat_to_rotvec(quat_normalize(q_rel))


def rotation_between(a: UnitQuat, b: UnitQuat) -> float:
    """Relative rotation angle between two orientations, in [0, pi]."""
    return quat_angle(quat_mul(b.as_array(), quat_conj(a.as_array())))


def look_at_quat(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera orientation with +z forward toward target, +x right, +y down."""
    fwd = np.asarray(target, dtype=float) - np.asarray(eye, dtype=float)
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("look_at target coincides with eye")
    fwd = fwd / n
    upv = np.asarray(up, dtype=float)
    right = np.cross(fwd, upv)
    rn = np.linalg.norm(right)
    if rn < 1e-9:  # forward parallel to up: pick an arbitrary right
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        rn = np.linalg.norm(right)
        if rn < 1e-9:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
            rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    m = np.column_stack([right, down, fwd])
    return quat_normalize(_quat_from_matrix(m))


def _quat_from_matrix(m: np.ndarray) -> np.ndarray:
    t = np.trace(m)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        return np.array(
            [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
        )
    i = int(np.argmax(np.diag(m)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = math.sqrt(max(1e-15, 1.0 + m[i, i] - m[j, j] - m[k, k])) * 2.0
    q = np.empty(4)
    q[i] = 0.25 * s
    q[j] = (m[j, i] + m[i, j]) / s
    q[k] = (m[k, i] + m[i, k]) / s
    q[3] = (m[k, j] - m[j, k]) / s
    return q
