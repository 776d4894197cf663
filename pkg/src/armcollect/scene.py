"""Synthetic tabletop world: primitives, pinhole RGB-D rendering, collision.

Camera convention: +z looks forward, +x right, +y down; a pixel (u, v)
casts through ((u - cx)/fx, (v - cy)/fy, 1). Depth is distance along the
camera forward axis, +inf where nothing is hit (stored as max float32 on
disk, see the record module).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NoWaypoints
from .geometry import Pose, UnitQuat, Vec3, quat_rotate
from .kinematics import KinematicChain, _frames

BACKGROUND_RGB = (18, 20, 26)
TABLE_RGB = (142, 126, 108)
LIGHT_DIR = np.array([0.35, 0.25, -0.9]) / np.linalg.norm([0.35, 0.25, -0.9])
_RAY_EPS = 1e-9


@dataclass(frozen=True)
class Sphere:
    center: Vec3
    radius: float
    label: str

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigError(f"sphere {self.label!r}: radius must be positive")


@dataclass(frozen=True)
class Box:
    center: Vec3
    half_extents: tuple[float, float, float]
    orientation: UnitQuat
    label: str

    def __post_init__(self):
        if any(h <= 0 for h in self.half_extents):
            raise ConfigError(f"box {self.label!r}: half extents must be positive")


@dataclass(frozen=True)
class Cylinder:
    base_center: Vec3
    axis: Vec3
    radius: float
    height: float
    label: str

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ConfigError(f"cylinder {self.label!r}: radius and height must be positive")
        if abs(self.axis.norm() - 1.0) > 1e-9:
            raise ConfigError(f"cylinder {self.label!r}: axis must be unit length")


Primitive = Sphere | Box | Cylinder


@dataclass(frozen=True)
class TablePlane:
    point: Vec3
    normal: Vec3

    def __post_init__(self):
        if abs(self.normal.norm() - 1.0) > 1e-9:
            raise ConfigError("table normal must be unit length")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError("principal point must lie inside the image")
        if self.width < 1 or self.height < 1:
            raise ConfigError("image dimensions must be positive")


@dataclass
class SceneModel:
    table: TablePlane
    obstacles: tuple[Primitive, ...]
    intrinsics: CameraIntrinsics
    extrinsics: "CameraExtrinsics"
    source_sha256: str = field(default="", compare=False)

    def __post_init__(self):
        labels = [p.label for p in self.obstacles]
        if len(labels) != len(set(labels)):
            raise ConfigError("obstacle labels must be unique")
        if not self.source_sha256:
            self.source_sha256 = hashlib.sha256(scene_to_text(self).encode()).hexdigest()


@dataclass
class DepthImage:
    width: int
    height: int
    depths: np.ndarray  # (height, width) float32, +inf = no hit

    def __post_init__(self):
        if self.depths.shape != (self.height, self.width):
            raise ValueError("depth buffer shape does not match dimensions")
        finite = self.depths[np.isfinite(self.depths)]
        if finite.size and not (finite > 0).all():
            raise ValueError("finite depths must be positive")

    def __eq__(self, other):
        return (
            isinstance(other, DepthImage)
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.depths, other.depths)
        )


@dataclass(frozen=True)
class LinkCapsule:
    p0: Vec3
    p1: Vec3
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("capsule radius must be positive")


@dataclass(frozen=True)
class ContactPoint:
    link_index: int
    label: str
    penetration: float


@dataclass(frozen=True)
class Contact:
    link_index: int
    label: str
    penetration: float
    time: float


@dataclass(frozen=True)
class CollisionReport:
    colliding: bool
    contacts: tuple[Contact, ...]

    def __post_init__(self):
        if self.colliding != bool(self.contacts):
            raise ValueError("colliding flag must match contact list")


# -- rendering ----------------------------------------------------------------

def _camera_rays(intr: CameraIntrinsics) -> np.ndarray:
    """Unit ray directions in the camera frame, row-major (h*w, 3)."""
    u = np.arange(intr.width, dtype=float)
    v = np.arange(intr.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    d = np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1
    ).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _rot_matrix(q: UnitQuat) -> np.ndarray:
    x, y, z, w = q.x, q.y, q.z, q.w
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def _intersect_plane(o, D, plane: TablePlane):
    n = plane.normal.as_array()
    denom = D @ n
    num = (plane.point.as_array() - o) @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(denom) > _RAY_EPS, num / denom, np.inf)
    t = np.where(t > _RAY_EPS, t, np.inf)
    normals = np.broadcast_to(n, D.shape)
    return t, normals


def _intersect_sphere(o, D, s: Sphere):
    oc = o - s.center.as_array()
    b = D @ oc
    c0 = oc @ oc - s.radius * s.radius
    disc = b * b - c0
    ok = disc > 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t1 = -b - sq
    t2 = -b + sq
    t = np.where(ok & (t1 > _RAY_EPS), t1, np.where(ok & (t2 > _RAY_EPS), t2, np.inf))
    t_safe = np.where(np.isfinite(t), t, 0.0)
    pts = o + D * t_safe[:, None]
    normals = (pts - s.center.as_array()) / s.radius
    return t, normals


def _intersect_box(o, D, b: Box):
    R = _rot_matrix(b.orientation)
    ol = (o - b.center.as_array()) @ R  # R^T (o - c)
    Dl = D @ R
    h = np.array(b.half_extents)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / Dl
    t_lo = (-h - ol) * inv
    t_hi = (h - ol) * inv
    # parallel rays: inside the slab -> (-inf, inf), outside -> no hit
    par = np.abs(Dl) <= _RAY_EPS
    inside = np.abs(ol) <= h
    t_lo = np.where(par, np.where(inside, -np.inf, np.inf), t_lo)
    t_hi = np.where(par, np.where(inside, np.inf, -np.inf), t_hi)
    tmin = np.minimum(t_lo, t_hi)
    tmax = np.maximum(t_lo, t_hi)
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    axis_near = np.argmax(tmin, axis=1)
    hit = (far >= np.maximum(near, _RAY_EPS)) & (far > _RAY_EPS)
    t = np.where(hit, np.where(near > _RAY_EPS, near, far), np.inf)
    # outward normal of the slab that was entered; rays starting inside get
    # the exit face normal, fine for shading
    entering = near > _RAY_EPS
    pts_l = ol + Dl * t[:, None]
    axis_far = np.argmax(np.where(tmax == far[:, None], 1, 0), axis=1)
    axis_hit = np.where(entering, axis_near, axis_far)
    n_local = np.zeros_like(D)
    rows = np.arange(D.shape[0])
    signs = np.sign(pts_l[rows, axis_hit])
    signs = np.where(signs == 0, 1.0, signs)
    n_local[rows, axis_hit] = signs
    normals = n_local @ R.T
    return t, normals


def _cyl_basis(axis: np.ndarray) -> np.ndarray:
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(axis, ref)
    x = x / np.linalg.norm(x)
    y = np.cross(axis, x)
    return np.column_stack([x, y, axis])  # columns: local x, y, z(axis)


def _intersect_cylinder(o, D, c: Cylinder):
    R = _cyl_basis(c.axis.as_array())
    ol = (o - c.base_center.as_array()) @ R
    Dl = D @ R
    n = D.shape[0]
    best_t = np.full(n, np.inf)
    best_n = np.zeros((n, 3))

    def consider(t, normals_l):
        nonlocal best_t, best_n
        better = t < best_t
        best_t = np.where(better, t, best_t)
        best_n[better] = normals_l[better]

    # lateral surface
    a = Dl[:, 0] ** 2 + Dl[:, 1] ** 2
    b = 2 * (ol[0] * Dl[:, 0] + ol[1] * Dl[:, 1])
    c0 = ol[0] ** 2 + ol[1] ** 2 - c.radius**2
    disc = b * b - 4 * a * c0
    ok = (disc > 0) & (a > _RAY_EPS)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    for sign in (-1.0, 1.0):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(ok, (-b + sign * sq) / (2 * a), np.inf)
        t_safe = np.where(np.isfinite(t), t, 0.0)
        z = ol[2] + Dl[:, 2] * t_safe
        t = np.where(np.isfinite(t) & (t > _RAY_EPS) & (z >= 0) & (z <= c.height), t, np.inf)
        pts = ol[:2] + Dl[:, :2] * np.where(np.isfinite(t), t, 0.0)[:, None]
        nl = np.zeros((n, 3))
        with np.errstate(invalid="ignore"):
            nl[:, :2] = pts / c.radius
        consider(t, nl)
    # caps
    for z0, nz in ((0.0, -1.0), (c.height, 1.0)):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(Dl[:, 2]) > _RAY_EPS, (z0 - ol[2]) / Dl[:, 2], np.inf)
        pts = ol[:2] + Dl[:, :2] * np.where(np.isfinite(t), t, 0.0)[:, None]
        rad2 = (pts**2).sum(axis=1)
        t = np.where((t > _RAY_EPS) & (rad2 <= c.radius**2), t, np.inf)
        nl = np.zeros((n, 3))
        nl[:, 2] = nz
        consider(t, nl)
    normals = best_n @ R.T
    return best_t, normals


def _raycast(scene: SceneModel, camera_pose: Pose):
    """Nearest hit per pixel: ray length, surface id (-2 none, -1 table,
    i-th obstacle), world normal, forward-axis depth."""
    intr = scene.intrinsics
    dirs_cam = _camera_rays(intr)
    R = _rot_matrix(camera_pose.orientation)
    o = camera_pose.position.as_array()
    D = dirs_cam @ R.T

    n = D.shape[0]
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -2, dtype=int)
    best_n = np.zeros((n, 3))

    surfaces = [(-1, _intersect_plane(o, D, scene.table))]
    for i, prim in enumerate(scene.obstacles):
        if isinstance(prim, Sphere):
            surfaces.append((i, _intersect_sphere(o, D, prim)))
        elif isinstance(prim, Box):
            surfaces.append((i, _intersect_box(o, D, prim)))
        else:
            surfaces.append((i, _intersect_cylinder(o, D, prim)))
    for sid, (t, normals) in surfaces:
        better = t < best_t
        best_t = np.where(better, t, best_t)
        best_id = np.where(better, sid, best_id)
        best_n[better] = normals[better]

    z_depth = best_t * dirs_cam[:, 2]
    return best_t, best_id, best_n, z_depth


def render_depth(scene: SceneModel, camera_pose: Pose) -> DepthImage:
    """Per-pixel distance along the camera forward axis to the nearest hit."""
    intr = scene.intrinsics
    _, _, _, z = _raycast(scene, camera_pose)
    depths = z.reshape(intr.height, intr.width).astype(np.float32)
    return DepthImage(intr.width, intr.height, depths)


def render_rgb(scene: SceneModel, camera_pose: Pose) -> np.ndarray:
    """Flat-shaded color image: per-label albedo, single directional light."""
    intr = scene.intrinsics
    _, sid, normals, _ = _raycast(scene, camera_pose)
    shade = np.maximum(0.0, normals @ (-LIGHT_DIR))
    img = np.empty((sid.shape[0], 3), dtype=np.uint8)
    img[:] = BACKGROUND_RGB
    albedos = {-1: np.array(TABLE_RGB, dtype=float)}
    for i, prim in enumerate(scene.obstacles):
        albedos[i] = np.array(label_color(prim.label), dtype=float)
    for key, albedo in albedos.items():
        mask = sid == key
        if mask.any():
            img[mask] = np.clip(np.round(albedo[None, :] * shade[mask, None]), 0, 255).astype(
                np.uint8
            )
    return img.reshape(intr.height, intr.width, 3)


def label_color(label: str) -> tuple[int, int, int]:
    """Deterministic per-label albedo, bright enough to shade visibly."""
    digest = hashlib.sha256(label.encode()).digest()
    return tuple(80 + (b % 176) for b in digest[:3])


# -- arm geometry -------------------------------------------------------------

def link_capsules(chain: KinematicChain, q, base_pose: Pose | None = None) -> list[LinkCapsule]:
    """Swept-sphere bodies spanning consecutive joint origins plus the tool.

    Zero-length spans (stacked joint origins) are dropped; radii come from
    the chain's per-span configuration.
    """
    arr = np.asarray(q, dtype=float)
    origins, _, p_ee, _ = _frames(chain, arr)
    pts = [np.zeros(3)] + [origins[i] for i in range(chain.n_joints)] + [p_ee]
    if base_pose is not None:
        bq = base_pose.orientation.as_array()
        bp = base_pose.position.as_array()
        pts = [bp + quat_rotate(bq, p) for p in pts]
    capsules = []
    for i in range(len(pts) - 1):
        if float(np.linalg.norm(pts[i + 1] - pts[i])) < 1e-12:
            continue
        capsules.append(
            LinkCapsule(Vec3.from_array(pts[i]), Vec3.from_array(pts[i + 1]), chain.link_radii[i])
        )
    return capsules


def arm_primitives(
    chain: KinematicChain, q, base_pose: Pose | None = None, prefix: str = "arm"
) -> list[Primitive]:
    """Render stand-in for the arm: one cylinder plus sphere caps per capsule."""
    prims: list[Primitive] = []
    for i, cap in enumerate(link_capsules(chain, q, base_pose)):
        a = cap.p0.as_array()
        b = cap.p1.as_array()
        axis = b - a
        h = float(np.linalg.norm(axis))
        prims.append(
            Cylinder(cap.p0, Vec3.from_array(axis / h), cap.radius, h, f"{prefix}:link{i}")
        )
        prims.append(Sphere(cap.p0, cap.radius, f"{prefix}:joint{i}a"))
        prims.append(Sphere(cap.p1, cap.radius, f"{prefix}:joint{i}b"))
    return prims


# -- exact segment/primitive distances ----------------------------------------

def _ternary_min(f, lo: float, hi: float, iters: int = 100) -> float:
    """Minimum of a unimodal f over [lo, hi]."""
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        f1, f2 = f(m1), f(m2)
        if f1 < f2:
            hi = m2
        elif f2 < f1:
            lo = m1
        else:
            lo, hi = m1, m2
    m = 0.5 * (lo + hi)
    return min(f(lo), f(hi), f(m))


def segment_sphere_distance(p0, p1, s: Sphere) -> float:
    a = p0
    ab = p1 - p0
    denom = float(ab @ ab)
    c = s.center.as_array()
    if denom < 1e-18:
        return float(np.linalg.norm(c - a)) - s.radius
    t = float((c - a) @ ab) / denom
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(a + t * ab - c)) - s.radius


def _point_box_signed(p, h) -> float:
    d = np.abs(p) - h
    outside = np.maximum(d, 0.0)
    out = float(np.linalg.norm(outside))
    if out > 0.0:
        return out
    return float(d.max())  # negative: depth to the nearest face


def segment_box_distance(p0, p1, b: Box) -> float:
    R = _rot_matrix(b.orientation)
    c = b.center.as_array()
    a = (p0 - c) @ R
    e = (p1 - c) @ R
    h = np.array(b.half_extents)
    d = e - a

    # interval of t where the segment is inside all three slabs
    t_lo, t_hi = 0.0, 1.0
    for i in range(3):
        if abs(d[i]) < 1e-15:
            if abs(a[i]) > h[i]:
                t_lo, t_hi = 1.0, 0.0
                break
        else:
            u = (-h[i] - a[i]) / d[i]
            v = (h[i] - a[i]) / d[i]
            if u > v:
                u, v = v, u
            t_lo = max(t_lo, u)
            t_hi = min(t_hi, v)
    if t_lo <= t_hi:
        # inside: maximize depth (concave in t) => most negative signed dist
        depth = -_ternary_min(lambda t: _point_box_signed(a + t * d, h), t_lo, t_hi)
        return -depth
    return _ternary_min(lambda t: _point_box_signed(a + t * d, h), 0.0, 1.0)


def _point_cyl_signed(p, r, hgt) -> float:
    rad = math.hypot(p[0], p[1])
    dr = rad - r
    da = max(-p[2], p[2] - hgt)
    if dr <= 0.0 and da <= 0.0:
        return max(dr, da)
    return math.hypot(max(dr, 0.0), max(da, 0.0))


def segment_cylinder_distance(p0, p1, c: Cylinder) -> float:
    R = _cyl_basis(c.axis.as_array())
    base = c.base_center.as_array()
    a = (p0 - base) @ R
    e = (p1 - base) @ R
    d = e - a

    # inside interval: radial quadratic AND axial band
    t_lo, t_hi = 0.0, 1.0
    if abs(d[2]) < 1e-15:
        if not 0.0 <= a[2] <= c.height:
            t_lo, t_hi = 1.0, 0.0
    else:
        u = (0.0 - a[2]) / d[2]
        v = (c.height - a[2]) / d[2]
        if u > v:
            u, v = v, u
        t_lo = max(t_lo, u)
        t_hi = min(t_hi, v)
    if t_lo <= t_hi:
        qa = d[0] ** 2 + d[1] ** 2
        qb = 2 * (a[0] * d[0] + a[1] * d[1])
        qc = a[0] ** 2 + a[1] ** 2 - c.radius**2
        if qa < 1e-18:
            if qc > 0:
                t_lo, t_hi = 1.0, 0.0
        else:
            disc = qb * qb - 4 * qa * qc
            if disc < 0:
                t_lo, t_hi = 1.0, 0.0
            else:
                sq = math.sqrt(disc)
                t_lo = max(t_lo, (-qb - sq) / (2 * qa))
                t_hi = min(t_hi, (-qb + sq) / (2 * qa))
    if t_lo <= t_hi:
        depth = -_ternary_min(
            lambda t: _point_cyl_signed(a + t * d, c.radius, c.height), t_lo, t_hi
        )
        return -depth
    return _ternary_min(lambda t: _point_cyl_signed(a + t * d, c.radius, c.height), 0.0, 1.0)


def segment_primitive_distance(p0: np.ndarray, p1: np.ndarray, prim: Primitive) -> float:
    """Signed distance from a segment to a primitive's surface (< 0 inside)."""
    if isinstance(prim, Sphere):
        return segment_sphere_distance(p0, p1, prim)
    if isinstance(prim, Box):
        return segment_box_distance(p0, p1, prim)
    return segment_cylinder_distance(p0, p1, prim)


def check_collision(
    capsules: list[LinkCapsule],
    scene: SceneModel,
    ignore_labels: frozenset[str] | set[str] = frozenset(),
) -> list[ContactPoint]:
    """Exact capsule-vs-obstacle contacts: distance below the capsule radius."""
    contacts = []
    for i, cap in enumerate(capsules):
        p0 = cap.p0.as_array()
        p1 = cap.p1.as_array()
        for prim in scene.obstacles:
            if prim.label in ignore_labels:
                continue
            d = segment_primitive_distance(p0, p1, prim)
            if d < cap.radius:
                contacts.append(ContactPoint(i, prim.label, cap.radius - d))
    return contacts


def audit_replay(
    session,
    scene: SceneModel,
    rate_hz: float,
    ignore_labels: frozenset[str] | set[str] = frozenset(),
) -> CollisionReport:
    """Collision-check every replay frame; a clean report marks a usable demo."""
    from .session import generate_replay  # session builds on scene types

    if not session.waypoints:
        raise NoWaypoints("cannot audit a session without waypoints")
    contacts: list[Contact] = []
    for frame in generate_replay(session, rate_hz):
        caps = link_capsules(session.chain, frame.q, session.base_pose)
        for pt in check_collision(caps, scene, ignore_labels):
            contacts.append(Contact(pt.link_index, pt.label, pt.penetration, frame.time))
    return CollisionReport(colliding=bool(contacts), contacts=tuple(contacts))


# -- scene definition files ----------------------------------------------------

def load_scene(path: str | Path) -> SceneModel:
    raw = Path(path).read_bytes()
    scene = parse_scene_text(raw.decode("utf-8"))
    scene.source_sha256 = hashlib.sha256(raw).hexdigest()
    return scene


def parse_scene_text(text: str) -> SceneModel:
    from .session import CameraExtrinsics

    table = None
    camera = None
    extrinsics = None
    obstacles: list[Primitive] = []

    def floats(vals, what, lineno):
        try:
            return [float(v) for v in vals]
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad number in {what}: {exc}") from exc

    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        fields = body.split()
        key, args = fields[0], fields[1:]
        if key == "table":
            if table is not None:
                raise ConfigError(f"line {lineno}: duplicate table")
            v = floats(args, "table", lineno)
            if len(v) != 6:
                raise ConfigError(f"line {lineno}: table needs 6 fields")
            n = np.array(v[3:6])
            nn = np.linalg.norm(n)
            if nn < 1e-12:
                raise ConfigError(f"line {lineno}: table normal must be nonzero")
            table = TablePlane(Vec3(v[0], v[1], v[2]), Vec3.from_array(n / nn))
        elif key == "camera":
            if camera is not None:
                raise ConfigError(f"line {lineno}: duplicate camera")
            v = floats(args, "camera", lineno)
            if len(v) != 6:
                raise ConfigError(f"line {lineno}: camera needs 6 fields")
            camera = CameraIntrinsics(v[0], v[1], v[2], v[3], int(v[4]), int(v[5]))
        elif key == "extrinsics":
            if extrinsics is not None:
                raise ConfigError(f"line {lineno}: duplicate extrinsics")
            v = floats(args, "extrinsics", lineno)
            if len(v) != 7:
                raise ConfigError(f"line {lineno}: extrinsics needs 7 fields")
            extrinsics = CameraExtrinsics(
                Vec3(v[0], v[1], v[2]), UnitQuat.normalized(v[3], v[4], v[5], v[6])
            )
        elif key == "sphere":
            if len(args) != 5:
                raise ConfigError(f"line {lineno}: sphere needs label + 4 numbers")
            v = floats(args[1:], "sphere", lineno)
            obstacles.append(Sphere(Vec3(v[0], v[1], v[2]), v[3], args[0]))
        elif key == "box":
            if len(args) != 11:
                raise ConfigError(f"line {lineno}: box needs label + 10 numbers")
            v = floats(args[1:], "box", lineno)
            obstacles.append(
                Box(
                    Vec3(v[0], v[1], v[2]),
                    (v[3], v[4], v[5]),
                    UnitQuat.normalized(v[6], v[7], v[8], v[9]),
                    args[0],
                )
            )
        elif key == "cylinder":
            if len(args) != 9:
                raise ConfigError(f"line {lineno}: cylinder needs label + 8 numbers")
            v = floats(args[1:], "cylinder", lineno)
            ax = np.array(v[3:6])
            an = np.linalg.norm(ax)
            if an < 1e-12:
                raise ConfigError(f"line {lineno}: cylinder axis must be nonzero")
            obstacles.append(
                Cylinder(Vec3(v[0], v[1], v[2]), Vec3.from_array(ax / an), v[6], v[7], args[0])
            )
        else:
            raise ConfigError(f"line {lineno}: unknown directive {key!r}")

    if table is None:
        raise ConfigError("scene file missing table")
    if camera is None:
        raise ConfigError("scene file missing camera")
    if extrinsics is None:
        raise ConfigError("scene file missing extrinsics")
    return SceneModel(table, tuple(obstacles), camera, extrinsics)


def scene_to_text(scene: SceneModel) -> str:
    """Canonical serialization; used for hashing programmatic scenes."""
    t = scene.table
    lines = [
        f"table {t.point.x!r} {t.point.y!r} {t.point.z!r} "
        f"{t.normal.x!r} {t.normal.y!r} {t.normal.z!r}",
        f"camera {scene.intrinsics.fx!r} {scene.intrinsics.fy!r} "
        f"{scene.intrinsics.cx!r} {scene.intrinsics.cy!r} "
        f"{scene.intrinsics.width} {scene.intrinsics.height}",
    ]
    e = scene.extrinsics
    lines.append(
        f"extrinsics {e.position.x!r} {e.position.y!r} {e.position.z!r} "
        f"{e.orientation.x!r} {e.orientation.y!r} {e.orientation.z!r} {e.orientation.w!r}"
    )
    for p in scene.obstacles:
        if isinstance(p, Sphere):
            lines.append(
                f"sphere {p.label} {p.center.x!r} {p.center.y!r} {p.center.z!r} {p.radius!r}"
            )
        elif isinstance(p, Box):
            h = p.half_extents
            o = p.orientation
            lines.append(
                f"box {p.label} {p.center.x!r} {p.center.y!r} {p.center.z!r} "
                f"{h[0]!r} {h[1]!r} {h[2]!r} {o.x!r} {o.y!r} {o.z!r} {o.w!r}"
            )
        else:
            lines.append(
                f"cylinder {p.label} {p.base_center.x!r} {p.base_center.y!r} "
                f"{p.base_center.z!r} {p.axis.x!r} {p.axis.y!r} {p.axis.z!r} "
                f"{p.radius!r} {p.height!r}"
            )
    return "\n".join(lines) + "\n"


def default_scene_path(name: str = "table.scene") -> Path:
    from importlib import resources

    return Path(str(resources.files("armcollect.configs").joinpath(name)))
