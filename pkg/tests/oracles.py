"""Independent reference implementations used only by tests.

These deliberately avoid the library's code paths: FK via naive 4x4
homogeneous matrix products, Jacobians via central finite differences,
ray casting via per-pixel scalar solves, and segment distances via dense
point sampling.
"""
import math

import numpy as np


# -- forward kinematics via 4x4 matrices ---------------------------------------

def quat_to_matrix(x, y, z, w):
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_angle_matrix(axis, angle):
    ax = np.asarray(axis, dtype=float)
    c, s = math.cos(angle), math.sin(angle)
    C = 1 - c
    x, y, z = ax
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def homogeneous(rot, trans):
    T = np.eye(4)
    T[:3, :3] = rot
    T[:3, 3] = trans
    return T


def fk_matrix_oracle(chain, q):
    """Tool pose by multiplying 4x4 matrices joint by joint."""
    T = np.eye(4)
    for joint, angle in zip(chain.joints, q):
        p = joint.transform.position
        o = joint.transform.orientation
        T = T @ homogeneous(quat_to_matrix(o.x, o.y, o.z, o.w), [p.x, p.y, p.z])
        T = T @ homogeneous(axis_angle_matrix([joint.axis.x, joint.axis.y, joint.axis.z], angle), [0, 0, 0])
    p = chain.tool.position
    o = chain.tool.orientation
    T = T @ homogeneous(quat_to_matrix(o.x, o.y, o.z, o.w), [p.x, p.y, p.z])
    return T


def fd_jacobian(chain, q, h=1e-6):
    """Central finite differences of forward kinematics."""
    from armcollect.kinematics import forward_kinematics

    q = np.asarray(q, dtype=float)
    J = np.zeros((6, q.size))
    for i in range(q.size):
        qp = q.copy()
        qm = q.copy()
        qp[i] += h
        qm[i] -= h
        pp = forward_kinematics(chain, qp)
        pm = forward_kinematics(chain, qm)
        J[:3, i] = (pp.position.as_array() - pm.position.as_array()) / (2 * h)
        # angular velocity from the relative quaternion across the step
        qa = pp.orientation.as_array()
        qb = pm.orientation.as_array()
        rel = _quat_mul(qa, _quat_conj(qb))
        rel = rel / np.linalg.norm(rel)
        if rel[3] < 0:
            rel = -rel
        vn = np.linalg.norm(rel[:3])
        if vn < 1e-14:
            rot = 2.0 * rel[:3]
        else:
            rot = rel[:3] * (2.0 * math.atan2(vn, rel[3]) / vn)
        J[3:, i] = rot / (2 * h)
    return J


def _quat_mul(a, b):
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


def _quat_conj(q):
    return np.array([-q[0], -q[1], -q[2], q[3]])


# -- per-pixel scalar ray casting ----------------------------------------------

_EPS = 1e-9


def _rot_scalar(q, v):
    x, y, z, w = q
    tx = 2 * (y * v[2] - z * v[1])
    ty = 2 * (z * v[0] - x * v[2])
    tz = 2 * (x * v[1] - y * v[0])
    return (
        v[0] + w * tx + y * tz - z * ty,
        v[1] + w * ty + z * tx - x * tz,
        v[2] + w * tz + x * ty - y * tx,
    )


def raycast_depth_oracle(scene, cam_pose):
    """Depth image computed pixel by pixel with naive quadratic solvers."""
    from armcollect.scene import Box, Cylinder, Sphere

    intr = scene.intrinsics
    q = (
        cam_pose.orientation.x,
        cam_pose.orientation.y,
        cam_pose.orientation.z,
        cam_pose.orientation.w,
    )
    o = (cam_pose.position.x, cam_pose.position.y, cam_pose.position.z)
    out = np.full((intr.height, intr.width), np.inf, dtype=np.float64)
    for v in range(intr.height):
        for u in range(intr.width):
            dc = ((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0)
            nn = math.sqrt(dc[0] ** 2 + dc[1] ** 2 + dc[2] ** 2)
            dc = (dc[0] / nn, dc[1] / nn, dc[2] / nn)
            d = _rot_scalar(q, dc)
            best = math.inf
            n = (scene.table.normal.x, scene.table.normal.y, scene.table.normal.z)
            p0 = (scene.table.point.x, scene.table.point.y, scene.table.point.z)
            den = d[0] * n[0] + d[1] * n[1] + d[2] * n[2]
            if abs(den) > _EPS:
                t = (
                    (p0[0] - o[0]) * n[0] + (p0[1] - o[1]) * n[1] + (p0[2] - o[2]) * n[2]
                ) / den
                if t > _EPS:
                    best = min(best, t)
            for prim in scene.obstacles:
                if isinstance(prim, Sphere):
                    best = min(best, _sphere_t(o, d, prim))
                elif isinstance(prim, Box):
                    best = min(best, _box_t(o, d, prim))
                elif isinstance(prim, Cylinder):
                    best = min(best, _cylinder_t(o, d, prim))
            out[v, u] = best * dc[2]
    return out


def _sphere_t(o, d, prim):
    c = (prim.center.x, prim.center.y, prim.center.z)
    oc = (o[0] - c[0], o[1] - c[1], o[2] - c[2])
    b = d[0] * oc[0] + d[1] * oc[1] + d[2] * oc[2]
    c0 = oc[0] ** 2 + oc[1] ** 2 + oc[2] ** 2 - prim.radius**2
    disc = b * b - c0
    if disc <= 0:
        return math.inf
    sq = math.sqrt(disc)
    for t in (-b - sq, -b + sq):
        if t > _EPS:
            return t
    return math.inf


def _box_t(o, d, prim):
    qq = prim.orientation
    qi = (-qq.x, -qq.y, -qq.z, qq.w)
    cc = (prim.center.x, prim.center.y, prim.center.z)
    ol = _rot_scalar(qi, (o[0] - cc[0], o[1] - cc[1], o[2] - cc[2]))
    dl = _rot_scalar(qi, d)
    h = prim.half_extents
    best = math.inf
    for axis in range(3):
        if abs(dl[axis]) < _EPS:
            continue
        for s in (-1.0, 1.0):
            t = (s * h[axis] - ol[axis]) / dl[axis]
            if t <= _EPS:
                continue
            p = [ol[i] + t * dl[i] for i in range(3)]
            if all(abs(p[j]) <= h[j] + 1e-12 for j in range(3) if j != axis):
                best = min(best, t)
    return best


def _cylinder_t(o, d, prim):
    ax = (prim.axis.x, prim.axis.y, prim.axis.z)
    ref = (0.0, 0.0, 1.0) if abs(ax[2]) < 0.9 else (1.0, 0.0, 0.0)
    xv = (
        ax[1] * ref[2] - ax[2] * ref[1],
        ax[2] * ref[0] - ax[0] * ref[2],
        ax[0] * ref[1] - ax[1] * ref[0],
    )
    nn = math.sqrt(sum(c * c for c in xv))
    xv = tuple(c / nn for c in xv)
    yv = (
        ax[1] * xv[2] - ax[2] * xv[1],
        ax[2] * xv[0] - ax[0] * xv[2],
        ax[0] * xv[1] - ax[1] * xv[0],
    )
    b0 = (prim.base_center.x, prim.base_center.y, prim.base_center.z)
    rel = (o[0] - b0[0], o[1] - b0[1], o[2] - b0[2])
    ol = (
        sum(rel[i] * xv[i] for i in range(3)),
        sum(rel[i] * yv[i] for i in range(3)),
        sum(rel[i] * ax[i] for i in range(3)),
    )
    dl = (
        sum(d[i] * xv[i] for i in range(3)),
        sum(d[i] * yv[i] for i in range(3)),
        sum(d[i] * ax[i] for i in range(3)),
    )
    best = math.inf
    a2 = dl[0] ** 2 + dl[1] ** 2
    bq = 2 * (ol[0] * dl[0] + ol[1] * dl[1])
    cq = ol[0] ** 2 + ol[1] ** 2 - prim.radius**2
    if a2 > _EPS:
        disc = bq * bq - 4 * a2 * cq
        if disc > 0:
            sq = math.sqrt(disc)
            for t in ((-bq - sq) / (2 * a2), (-bq + sq) / (2 * a2)):
                if t > _EPS and 0.0 <= ol[2] + t * dl[2] <= prim.height:
                    best = min(best, t)
    if abs(dl[2]) > _EPS:
        for z0 in (0.0, prim.height):
            t = (z0 - ol[2]) / dl[2]
            if t > _EPS:
                px, py = ol[0] + t * dl[0], ol[1] + t * dl[1]
                if px * px + py * py <= prim.radius**2:
                    best = min(best, t)
    return best


# -- dense-sampling segment distance --------------------------------------------

def sampled_min_distance(p0, p1, prim, samples=10**4):
    """Min point-to-primitive signed distance over dense segment samples."""
    from armcollect.scene import Box, Cylinder, Sphere, _cyl_basis, _rot_matrix

    ts = np.linspace(0.0, 1.0, samples)
    pts = p0[None, :] + ts[:, None] * (p1 - p0)[None, :]
    if isinstance(prim, Sphere):
        d = np.linalg.norm(pts - prim.center.as_array(), axis=1) - prim.radius
    elif isinstance(prim, Box):
        R = _rot_matrix(prim.orientation)
        local = (pts - prim.center.as_array()) @ R
        h = np.array(prim.half_extents)
        dd = np.abs(local) - h
        out = np.linalg.norm(np.maximum(dd, 0.0), axis=1)
        inner = np.max(dd, axis=1)
        d = np.where(out > 0, out, inner)
    else:
        R = _cyl_basis(prim.axis.as_array())
        local = (pts - prim.base_center.as_array()) @ R
        rad = np.hypot(local[:, 0], local[:, 1])
        dr = rad - prim.radius
        da = np.maximum(-local[:, 2], local[:, 2] - prim.height)
        inside = (dr <= 0) & (da <= 0)
        d = np.where(
            inside, np.maximum(dr, da), np.hypot(np.maximum(dr, 0), np.maximum(da, 0))
        )
    return float(d.min())
