"""Serial-chain arm model: FK, geometric Jacobian, damped-least-squares IK.

The chain is a list of revolute joints, each a fixed parent-to-joint
transform plus a rotation axis expressed in the joint frame. Joint limits,
the reach shell, link capsule radii, and the home configuration are
configuration data loaded from a chain definition file, so a different
robot drops in by swapping the file.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, NotConverged
from .geometry import (
    Pose,
    UnitQuat,
    Vec3,
    quat_conj,
    quat_mul,
    quat_normalize,
    quat_to_rotvec,
)

JointConfig = tuple[float, ...]


@dataclass(frozen=True)
class JointLimits:
    """Per-joint angle bounds in radians."""

    min_angles: tuple[float, ...]
    max_angles: tuple[float, ...]

    def __post_init__(self):
        if len(self.min_angles) != len(self.max_angles):
            raise ConfigError("joint limit arrays differ in length")
        for lo, hi in zip(self.min_angles, self.max_angles):
            if not lo < hi:
                raise ConfigError(f"joint limit min {lo} must be < max {hi}")


@dataclass(frozen=True)
class Joint:
    """One revolute joint: fixed parent transform + rotation axis (unit, joint frame)."""

    transform: Pose
    axis: Vec3

    def __post_init__(self):
        if abs(self.axis.norm() - 1.0) > 1e-9:
            raise ConfigError(f"joint axis {self.axis} is not unit length")


class KinematicChain:
    """Arm model with precomputed arrays for the solver hot path.

    Equality is identity: a chain is shared, never structurally compared.
    """

    def __init__(
        self,
        joints: tuple[Joint, ...],
        tool: Pose,
        limits: JointLimits,
        reach_min: float,
        reach_max: float,
        end_effector_dims: tuple[float, float],
        link_radii: tuple[float, ...],
        home: tuple[float, ...],
        name: str = "chain",
        source_sha256: str | None = None,
    ):
        if len(joints) < 1:
            raise ConfigError("chain needs at least one joint")
        if len(limits.min_angles) != len(joints):
            raise ConfigError("joint limit count does not match joint count")
        if not (0.0 <= reach_min < reach_max):
            raise ConfigError(f"reach shell [{reach_min}, {reach_max}] is invalid")
        if len(link_radii) != len(joints) + 1:
            raise ConfigError("link_radii must have one entry per link span (joints + tool)")
        if len(home) != len(joints):
            raise ConfigError("home config length does not match joint count")
        if any(r <= 0 for r in link_radii):
            raise ConfigError("link radii must be positive")
        if any(d <= 0 for d in end_effector_dims):
            raise ConfigError("end effector dims must be positive")
        self.joints = tuple(joints)
        self.tool = tool
        self.limits = limits
        self.reach_min = float(reach_min)
        self.reach_max = float(reach_max)
        self.end_effector_dims = (float(end_effector_dims[0]), float(end_effector_dims[1]))
        self.link_radii = tuple(float(r) for r in link_radii)
        self.home = tuple(float(a) for a in home)
        self.name = name
        self.source_sha256 = source_sha256 or hashlib.sha256(
            chain_to_text(self).encode()
        ).hexdigest()
        _check_within_limits_or_raise(self, self.home)

        # flat tuples for the FK/IK hot path (scalar math in _frames)
        self._jp = tuple(
            (j.transform.position.x, j.transform.position.y, j.transform.position.z)
            for j in joints
        )
        self._jq = tuple(
            (
                j.transform.orientation.x,
                j.transform.orientation.y,
                j.transform.orientation.z,
                j.transform.orientation.w,
            )
            for j in joints
        )
        self._ja = tuple((j.axis.x, j.axis.y, j.axis.z) for j in joints)
        self._tp = (tool.position.x, tool.position.y, tool.position.z)
        self._tq = (
            tool.orientation.x,
            tool.orientation.y,
            tool.orientation.z,
            tool.orientation.w,
        )
        self._lo = np.array(limits.min_angles, dtype=float)
        self._hi = np.array(limits.max_angles, dtype=float)

    @property
    def n_joints(self) -> int:
        return len(self.joints)


@dataclass(frozen=True)
class IkParams:
    """Solver knobs. Defaults favor stability near singular configurations."""

    damping: float = 0.1
    step_scale: float = 0.5
    max_iters: int = 200
    pos_tol: float = 1e-3
    ori_tol: float = 0.01

    def __post_init__(self):
        if self.damping <= 0:
            raise ValueError("damping must be > 0")
        if not 0 < self.step_scale <= 1:
            raise ValueError("step_scale must be in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.pos_tol <= 0 or self.ori_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class IkResult:
    """Converged solve: configuration, achieved pose, and the iteration trace."""

    q: JointConfig
    achieved: Pose
    iters: int
    trace_positions: tuple[Vec3, ...]
    trace_configs: tuple[JointConfig, ...]


def _as_q_array(chain: KinematicChain, q) -> np.ndarray:
    arr = np.asarray(q, dtype=float)
    if arr.shape != (chain.n_joints,):
        raise DimensionMismatch(
            f"config has {arr.size} angles, chain has {chain.n_joints} joints"
        )
    return arr


def _check_within_limits_or_raise(chain, q) -> None:
    for i, (a, lo, hi) in enumerate(zip(q, chain.limits.min_angles, chain.limits.max_angles)):
        if not lo <= a <= hi:
            raise ConfigError(f"angle {a} for joint {i} outside limits [{lo}, {hi}]")


def _frames(chain: KinematicChain, q) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Joint origins, world-frame axes, and the tool pose for config q.

    Scalar math throughout: this sits under every solver iteration and is
    ~10x faster than chaining small numpy ops.
    """
    n = chain.n_joints
    px = py = pz = 0.0
    rx, ry, rz, rw = 0.0, 0.0, 0.0, 1.0
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    jp, jq, ja = chain._jp, chain._jq, chain._ja
    for i in range(n):
        jx, jy, jz = jp[i]
        # p += R(r) * j
        tx = 2.0 * (ry * jz - rz * jy)
        ty = 2.0 * (rz * jx - rx * jz)
        tz = 2.0 * (rx * jy - ry * jx)
        px += jx + rw * tx + ry * tz - rz * ty
        py += jy + rw * ty + rz * tx - rx * tz
        pz += jz + rw * tz + rx * ty - ry * tx
        # r = r * joint fixed quat
        bx, by, bz, bw = jq[i]
        rx, ry, rz, rw = (
            rw * bx + rx * bw + ry * bz - rz * by,
            rw * by - rx * bz + ry * bw + rz * bx,
            rw * bz + rx * by - ry * bx + rz * bw,
            rw * bw - rx * bx - ry * by - rz * bz,
        )
        origins[i, 0] = px
        origins[i, 1] = py
        origins[i, 2] = pz
        ax, ay, az = ja[i]
        tx = 2.0 * (ry * az - rz * ay)
        ty = 2.0 * (rz * ax - rx * az)
        tz = 2.0 * (rx * ay - ry * ax)
        axes[i, 0] = ax + rw * tx + ry * tz - rz * ty
        axes[i, 1] = ay + rw * ty + rz * tx - rx * tz
        axes[i, 2] = az + rw * tz + rx * ty - ry * tx
        # r = r * Rot(axis_local, q_i)
        half = 0.5 * float(q[i])
        s = math.sin(half)
        bx, by, bz, bw = ax * s, ay * s, az * s, math.cos(half)
        rx, ry, rz, rw = (
            rw * bx + rx * bw + ry * bz - rz * by,
            rw * by - rx * bz + ry * bw + rz * bx,
            rw * bz + rx * by - ry * bx + rz * bw,
            rw * bw - rx * bx - ry * by - rz * bz,
        )
    jx, jy, jz = chain._tp
    tx = 2.0 * (ry * jz - rz * jy)
    ty = 2.0 * (rz * jx - rx * jz)
    tz = 2.0 * (rx * jy - ry * jx)
    p_ee = np.array(
        [
            px + jx + rw * tx + ry * tz - rz * ty,
            py + jy + rw * ty + rz * tx - rx * tz,
            pz + jz + rw * tz + rx * ty - ry * tx,
        ]
    )
    bx, by, bz, bw = chain._tq
    q_ee = np.array(
        [
            rw * bx + rx * bw + ry * bz - rz * by,
            rw * by - rx * bz + ry * bw + rz * bx,
            rw * bz + rx * by - ry * bx + rz * bw,
            rw * bw - rx * bx - ry * by - rz * bz,
        ]
    )
    n_ee = math.sqrt(float(q_ee @ q_ee))
    return origins, axes, p_ee, q_ee / n_ee


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    """Tool-frame pose in the chain's base frame. Deterministic."""
    arr = _as_q_array(chain, q)
    _, _, p_ee, q_ee = _frames(chain, arr)
    return Pose.from_arrays(p_ee, q_ee)


def joint_origins(chain: KinematicChain, q) -> list[np.ndarray]:
    """Chain-frame joint origin positions plus the tool point, in order."""
    arr = _as_q_array(chain, q)
    origins, _, p_ee, _ = _frames(chain, arr)
    return [origins[i].copy() for i in range(chain.n_joints)] + [p_ee]


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """6xN geometric Jacobian: linear rows stacked over angular rows."""
    arr = _as_q_array(chain, q)
    origins, axes, p_ee, _ = _frames(chain, arr)
    J = np.empty((6, chain.n_joints))
    for i in range(chain.n_joints):
        J[:3, i] = np.cross(axes[i], p_ee - origins[i])
        J[3:, i] = axes[i]
    return J


def clamp_to_limits(chain: KinematicChain, q) -> JointConfig:
    """Project raw angles into the joint limit box. Idempotent."""
    arr = _as_q_array(chain, q)
    return tuple(np.clip(arr, chain._lo, chain._hi).tolist())


def is_reachable(chain: KinematicChain, base_pose: Pose, point: Vec3) -> bool:
    """Closed spherical-shell reachability test around the base position."""
    d = np.linalg.norm(point.as_array() - base_pose.position.as_array())
    return chain.reach_min <= d <= chain.reach_max


# Slack for the monotone-approach guard (float noise only).
_MONO_EPS = 1e-12
# Per-iteration magnitude caps on the error fed to the DLS update; keep the
# linearization honest on distant targets.
_POS_ERR_CAP = 0.1
_ORI_ERR_CAP = 0.5
# Approach phase hands over to orientation refinement inside this fraction
# of pos_tol; landing inside [0.40, 0.50]*pos_tol keeps headroom for the
# refinement phase's position ratchet.
_HANDOVER = 0.5
_LAND_LO = 0.40
_LAND_AIM = 0.45
# Retry seeds are only worth their budget on generous iteration allowances.
_LADDER_MIN_ITERS = 25
# Self-motion restarts when orientation refinement is trapped.
_MAX_WIGGLES = 14
_WIGGLE_RNG_SEED = 0x5EED


def solve_ik_dls(
    chain: KinematicChain,
    seed,
    target: Pose,
    params: IkParams = IkParams(),
) -> IkResult:
    """Damped-least-squares IK from seed toward target.

    Every update is dq = J^T (J J^T + damping^2 I)^-1 e scaled by
    step_scale and clamped to the joint limits. The solve runs in two
    prioritized stages: an approach stage that drives the end-effector
    position toward the target along a monotone path (position rows of the
    Jacobian only), and a refinement stage that rotates the tool into the
    target orientation while a corrector pins the position ratchet, so the
    recorded trace never retreats from the target. If the stages stall,
    the solve is retried from a short ladder of target-aligned seeds, each
    attempt monotone on its own trace; the first converged attempt wins.

    Raises NotConverged carrying the best configuration seen across
    attempts when no attempt reaches both tolerances.
    """
    q0 = np.array(clamp_to_limits(chain, _as_q_array(chain, seed)))
    target_p = target.position.as_array()
    target_q = target.orientation.as_array()

    attempts = [(q0, False)]
    if params.max_iters >= _LADDER_MIN_ITERS:
        attempts.extend(_retry_seeds(chain, q0, target_p))

    best = None  # (combined residual, q, trace_p, trace_q, res_pos, res_ori)
    total_iters = 0
    for seed_q, freeze_wrist in attempts:
        out = _attempt_dls(chain, seed_q, target_p, target_q, params, freeze_wrist)
        converged, q, achieved, iters, trace_p, trace_q, res_p, res_o = out
        total_iters += iters
        if converged:
            return IkResult(
                q=tuple(q.tolist()),
                achieved=achieved,
                iters=iters,
                trace_positions=tuple(Vec3.from_array(p) for p in trace_p),
                trace_configs=tuple(tuple(c.tolist()) for c in trace_q),
            )
        combined = math.hypot(res_p, res_o)
        if best is None or combined < best[0]:
            best = (combined, q, trace_p, res_p, res_o)

    raise NotConverged(
        best_q=tuple(best[1].tolist()),
        residual_pos=best[3],
        residual_ori=best[4],
        trace=tuple(Vec3.from_array(p) for p in best[2]),
        iters=total_iters,
    )


def _retry_seeds(
    chain: KinematicChain, q0: np.ndarray, target_p: np.ndarray
) -> list[tuple[np.ndarray, bool]]:
    """Deterministic fallback seeds biased toward the target's azimuth.

    The elbow (mid-chain joint) is pre-bent so the seed's reach matches
    the target radius, and wrist-branch seeds run with the wrist frozen
    through the approach so the seeded branch survives until orientation
    refinement.
    """
    lo, hi = chain._lo, chain._hi
    mid = 0.5 * (lo + hi)
    seeds = [(mid.copy(), False)]
    az = math.atan2(target_p[1], target_p[0])
    s = mid.copy()
    s[0] = min(max(az, lo[0]), hi[0])
    seeds.append((s, False))
    if chain.n_joints >= 6:
        elbow = chain.n_joints // 2
        s2 = s.copy()
        s2[elbow] = _radius_matched_angle(chain, s, elbow, target_p)
        seeds.append((s2, False))
        for f5 in (0.25, 0.75):
            for f6 in (0.15, 0.5, 0.85):  # wrist branches at the matched elbow
                s4 = s2.copy()
                s4[elbow + 1] = lo[elbow + 1] + f5 * (hi[elbow + 1] - lo[elbow + 1])
                s4[elbow + 2] = lo[elbow + 2] + f6 * (hi[elbow + 2] - lo[elbow + 2])
                seeds.append((s4, True))
    flipped = az - math.pi if az > 0 else az + math.pi
    s3 = mid.copy()
    s3[0] = min(max(flipped, lo[0]), hi[0])
    seeds.append((s3, False))
    seeds.append((np.array(chain.home), False))
    return [(s, fw) for s, fw in seeds if not np.array_equal(s, q0)]


def _radius_matched_angle(chain, seed, joint, target_p):
    """Coarse scan of one joint so the tool radius matches the target's."""
    r_target = float(np.linalg.norm(target_p))
    lo, hi = chain._lo[joint], chain._hi[joint]
    best = (math.inf, seed[joint])
    q = seed.copy()
    for val in np.linspace(lo, hi, 17):
        q[joint] = val
        p = _frames(chain, q)[2]
        err = abs(float(np.linalg.norm(p)) - r_target)
        if err < best[0]:
            best = (err, val)
    return best[1]


def _attempt_dls(chain, seed_q, target_p, target_q, params, freeze_wrist=False):
    lo, hi = chain._lo, chain._hi
    lam2 = params.damping * params.damping
    scale = params.step_scale
    pos_tol, ori_tol = params.pos_tol, params.ori_tol
    n_wrist = 3 if freeze_wrist and chain.n_joints >= 6 else 0

    def residuals(p, qe):
        e_pos = target_p - p
        e_ori = quat_to_rotvec(quat_normalize(quat_mul(target_q, quat_conj(qe))))
        return e_pos, e_ori

    def capped(v, m):
        n = math.sqrt(float(v @ v))
        return v if n <= m else v * (m / n)

    def dls_step(J, e, q, dim):
        def solve(Jm):
            return Jm.T @ np.linalg.solve(Jm @ Jm.T + lam2 * np.eye(dim), e)

        dq = solve(J)
        # active-set: joints pinned at a limit must not push further out
        for _ in range(3):
            blocked = ((q <= lo + _MONO_EPS) & (dq < 0)) | ((q >= hi - _MONO_EPS) & (dq > 0))
            if not blocked.any():
                break
            Jm = J.copy()
            Jm[:, blocked] = 0.0
            dq = solve(Jm)
            dq[blocked] = 0.0
        return dq

    def jac(origins, axes, p):
        return np.vstack([np.cross(axes, p - origins).T, axes.T])

    q = seed_q.copy()
    fr = _frames(chain, q)
    trace_p = [fr[2].copy()]
    trace_q = [q.copy()]
    refining = False
    scans = 0
    wrist_scans = 0
    wiggles = 0
    rng = np.random.default_rng(_WIGGLE_RNG_SEED)  # fixed: solves stay deterministic
    it = 0
    while True:
        origins, axes, p, qe = fr
        e_pos, e_ori = residuals(p, qe)
        pn = float(np.linalg.norm(e_pos))
        on = float(np.linalg.norm(e_ori))
        if pn <= pos_tol and on <= ori_tol:
            return True, q, Pose.from_arrays(p, qe), it, trace_p, trace_q, pn, on
        if it >= params.max_iters:
            return False, q, None, it, trace_p, trace_q, pn, on
        if not refining and pn <= _HANDOVER * pos_tol:
            refining = True
        J = jac(origins, axes, p)

        acc = None
        if not refining:
            # approach: position rows only, strictly decreasing distance
            Jp = J[:3]
            if n_wrist:
                Jp = Jp.copy()
                Jp[:, -n_wrist:] = 0.0  # hold the seeded wrist branch
            step = scale * dls_step(Jp, capped(e_pos, _POS_ERR_CAP), q, 3)
            if n_wrist:
                step[-n_wrist:] = 0.0
            a = 1.0
            for _ in range(10):
                qt = np.clip(q + a * step, lo, hi)
                if not np.array_equal(qt, q):
                    ft = _frames(chain, qt)
                    dn = float(np.linalg.norm(target_p - ft[2]))
                    if dn < pn:
                        if dn < _LAND_LO * pos_tol < pn:
                            # soften the final approach step so the
                            # refinement ratchet keeps headroom
                            a *= (pn - _LAND_AIM * pos_tol) / max(_MONO_EPS, pn - dn)
                            qt = np.clip(q + a * step, lo, hi)
                            ft = _frames(chain, qt)
                            dn = float(np.linalg.norm(target_p - ft[2]))
                            if not dn < pn:
                                a *= 0.5
                                continue
                        acc = (qt, ft)
                        break
                a *= 0.5
        else:
            # refinement: full pose step, then pull position back inside
            # the ratchet with pure-position corrector sub-steps
            e6 = np.concatenate([e_pos, capped(e_ori, _ORI_ERR_CAP)])
            step = scale * dls_step(J, e6, q, 6)
            a = 1.0
            corrected = 0
            for _ in range(6):
                qt = np.clip(q + a * step, lo, hi)
                if not np.array_equal(qt, q):
                    ft = _frames(chain, qt)
                    ep_t, eo_t = residuals(ft[2], ft[3])
                    dn = float(np.linalg.norm(ep_t))
                    onn = float(np.linalg.norm(eo_t))
                    if onn < on and corrected < 2:
                        # restore loop: full-gain position pull, no scaling
                        subs = 0
                        while dn > pn + _MONO_EPS and subs < 10:
                            Jt = jac(ft[0], ft[1], ft[2])
                            e_sub = ep_t * (1.0 - 0.96 * pn / dn)
                            qt = np.clip(qt + dls_step(Jt[:3], e_sub, qt, 3), lo, hi)
                            ft = _frames(chain, qt)
                            ep_t, eo_t = residuals(ft[2], ft[3])
                            dn = float(np.linalg.norm(ep_t))
                            onn = float(np.linalg.norm(eo_t))
                            subs += 1
                        if subs:
                            corrected += 1
                        if dn <= pn + _MONO_EPS and onn < on:
                            acc = (qt, ft)
                            break
                a *= 0.5
            if acc is None and scans < 3:
                # self-motion escape: the last joint often carries the tool
                # on its axis, so sweeping it leaves the position untouched
                scans += 1
                hop = _axis_scan(chain, q, residuals, pn, on)
                if hop is not None:
                    q, fr = hop
                    trace_p.append(fr[2].copy())
                    trace_q.append(q.copy())
                    it += 1
                    continue
            if acc is None and wrist_scans < 2 and chain.n_joints >= 6:
                # wrist-branch escape: grid the distal joints, repair position
                wrist_scans += 1
                hop = _distal_scan(chain, q, residuals, pn, on, dls_step, jac)
                if hop is not None:
                    q, fr = hop
                    trace_p.append(fr[2].copy())
                    trace_q.append(q.copy())
                    it += 1
                    continue
            if acc is None and wiggles < _MAX_WIGGLES:
                # orientation trapped: hop to a fresh posture on the
                # self-motion manifold (position pulled back inside the
                # ratchet) and let the descent continue from there
                wiggles += 1
                hop = _nullspace_hop(chain, q, J, residuals, pn, rng, dls_step, jac)
                if hop is not None:
                    q, fr = hop
                    trace_p.append(fr[2].copy())
                    trace_q.append(q.copy())
                    it += 1
                    continue
        if acc is None:
            if not refining and n_wrist:
                n_wrist = 0  # wrist hold too restrictive here; free it
                continue
            e_pos, e_ori = residuals(fr[2], fr[3])
            return (
                False, q, None, it, trace_p, trace_q,
                float(np.linalg.norm(e_pos)), float(np.linalg.norm(e_ori)),
            )
        q, fr = acc
        trace_p.append(fr[2].copy())
        trace_q.append(q.copy())
        it += 1


def _nullspace_hop(chain, q, J, residuals, pn, rng, dls_step, jac):
    """Random posture jump along the position nullspace, position restored.

    The jump itself ignores orientation: it exists to leave a basin. The
    corrector pulls the end effector back inside the position ratchet, so
    the monotone trace survives the hop.
    """
    lo, hi = chain._lo, chain._hi
    Jp = J[:3]
    nullproj = np.eye(chain.n_joints) - np.linalg.pinv(Jp, rcond=1e-8) @ Jp
    # sample a few manifold jumps, restore the most promising one first
    candidates = []
    for mag in (0.6, 1.2, 2.4, 1.2, 0.6):
        delta = nullproj @ rng.normal(0.0, mag, chain.n_joints)
        qt = np.clip(q + delta, lo, hi)
        if np.array_equal(qt, q):
            continue
        ft = _frames(chain, qt)
        _, eo_t = residuals(ft[2], ft[3])
        candidates.append((float(np.linalg.norm(eo_t)), qt, ft))
    candidates.sort(key=lambda c: c[0])
    for _, qt, ft in candidates[:3]:
        ep_t, _ = residuals(ft[2], ft[3])
        dn = float(np.linalg.norm(ep_t))
        subs = 0
        while dn > pn + _MONO_EPS and subs < 20:
            Jt = jac(ft[0], ft[1], ft[2])
            e_sub = ep_t * (1.0 - 0.96 * min(pn, dn) / dn)
            qt = np.clip(qt + dls_step(Jt[:3], e_sub, qt, 3), lo, hi)
            ft = _frames(chain, qt)
            ep_t, _ = residuals(ft[2], ft[3])
            dn = float(np.linalg.norm(ep_t))
            subs += 1
        if dn <= pn + _MONO_EPS:
            return qt, ft
    return None


def _distal_scan(chain, q, residuals, pn, on, dls_step, jac):
    """Grid the last two joints for a better wrist branch, then repair.

    Orientation basins at near-extended postures differ mostly in the
    distal joints; a coarse grid finds the branch, the position corrector
    makes the jump legal for the monotone trace.
    """
    lo, hi = chain._lo, chain._hi
    n = chain.n_joints
    cands = []
    for v6 in np.linspace(lo[n - 2], hi[n - 2], 9):
        for v7 in np.linspace(lo[n - 1], hi[n - 1], 9):
            qt = q.copy()
            qt[n - 2] = v6
            qt[n - 1] = v7
            ft = _frames(chain, qt)
            _, eo_t = residuals(ft[2], ft[3])
            cands.append((float(np.linalg.norm(eo_t)), qt, ft))
    cands.sort(key=lambda c: c[0])
    for o_pre, qt, ft in cands[:3]:
        if o_pre >= on - 1e-9:
            break
        ep_t, eo_t = residuals(ft[2], ft[3])
        dn = float(np.linalg.norm(ep_t))
        subs = 0
        while dn > pn + _MONO_EPS and subs < 20:
            Jt = jac(ft[0], ft[1], ft[2])
            e_sub = ep_t * (1.0 - 0.96 * min(pn, dn) / dn)
            qt = np.clip(qt + dls_step(Jt[:3], e_sub, qt, 3), lo, hi)
            ft = _frames(chain, qt)
            ep_t, eo_t = residuals(ft[2], ft[3])
            dn = float(np.linalg.norm(ep_t))
            subs += 1
        if dn <= pn + _MONO_EPS and float(np.linalg.norm(eo_t)) < on - 1e-9:
            return qt, ft
    return None


def _axis_scan(chain, q, residuals, pn, on):
    """Sweep the last joint for a better orientation at identical position.

    Only usable when the tool sits on the last rotation axis; otherwise the
    position would move, so the scan is skipped.
    """
    tp = np.array(chain._tp)
    axis = np.array(chain._ja[-1])
    radial = tp - (tp @ axis) * axis
    if float(radial @ radial) > 1e-18:
        return None
    lo, hi = chain._lo[-1], chain._hi[-1]
    best = None
    for val in np.linspace(lo, hi, 61):
        qt = q.copy()
        qt[-1] = val
        ft = _frames(chain, qt)
        _, eo = residuals(ft[2], ft[3])
        o = float(np.linalg.norm(eo))
        if best is None or o < best[0]:
            best = (o, qt, ft)
    if best[0] < on - 1e-9:
        return best[1], best[2]
    return None


# -- chain definition files ---------------------------------------------------

def load_chain(path: str | Path) -> KinematicChain:
    """Parse a chain definition file with strict validation."""
    raw = Path(path).read_bytes()
    chain = parse_chain_text(raw.decode("utf-8"))
    chain.source_sha256 = hashlib.sha256(raw).hexdigest()
    return chain


def default_chain() -> KinematicChain:
    """The shipped 7-joint Panda-style arm."""
    ref = resources.files("armcollect.configs").joinpath("panda.chain")
    raw = ref.read_bytes()
    chain = parse_chain_text(raw.decode("utf-8"))
    chain.source_sha256 = hashlib.sha256(raw).hexdigest()
    return chain


def default_chain_path() -> Path:
    return Path(str(resources.files("armcollect.configs").joinpath("panda.chain")))


def parse_chain_text(text: str) -> KinematicChain:
    scalars: dict[str, list[str]] = {}
    joint_rows: list[list[str]] = []
    tool_row: list[str] | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        fields = body.split()
        key, args = fields[0], fields[1:]
        if key == "joint":
            if len(args) != 12:
                raise ConfigError(f"line {lineno}: joint needs 12 fields, got {len(args)}")
            joint_rows.append(args)
        elif key == "tool":
            if tool_row is not None:
                raise ConfigError(f"line {lineno}: duplicate tool")
            if len(args) != 7:
                raise ConfigError(f"line {lineno}: tool needs 7 fields, got {len(args)}")
            tool_row = args
        elif key in ("name", "reach", "end_effector_dims", "link_radii", "home"):
            if key in scalars:
                raise ConfigError(f"line {lineno}: duplicate {key}")
            scalars[key] = args
        else:
            raise ConfigError(f"line {lineno}: unknown directive {key!r}")

    for req in ("name", "reach", "end_effector_dims", "link_radii", "home"):
        if req not in scalars:
            raise ConfigError(f"missing required {req} entry")
    if not joint_rows:
        raise ConfigError("chain file defines no joints")
    if tool_row is None:
        raise ConfigError("missing tool entry")

    def floats(vals, what):
        try:
            return [float(v) for v in vals]
        except ValueError as exc:
            raise ConfigError(f"bad number in {what}: {exc}") from exc

    reach = floats(scalars["reach"], "reach")
    if len(reach) != 2:
        raise ConfigError("reach needs exactly two values")
    dims = floats(scalars["end_effector_dims"], "end_effector_dims")
    if len(dims) != 2:
        raise ConfigError("end_effector_dims needs exactly two values")

    joints = []
    mins, maxs = [], []
    for row in joint_rows:
        v = floats(row, "joint")
        pose = Pose(Vec3(v[0], v[1], v[2]), UnitQuat.normalized(v[3], v[4], v[5], v[6]))
        axis = np.array(v[7:10])
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise ConfigError("joint axis must be nonzero")
        axis = axis / n
        joints.append(Joint(pose, Vec3.from_array(axis)))
        mins.append(v[10])
        maxs.append(v[11])

    tv = floats(tool_row, "tool")
    tool = Pose(Vec3(tv[0], tv[1], tv[2]), UnitQuat.normalized(tv[3], tv[4], tv[5], tv[6]))

    return KinematicChain(
        joints=tuple(joints),
        tool=tool,
        limits=JointLimits(tuple(mins), tuple(maxs)),
        reach_min=reach[0],
        reach_max=reach[1],
        end_effector_dims=(dims[0], dims[1]),
        link_radii=tuple(floats(scalars["link_radii"], "link_radii")),
        home=tuple(floats(scalars["home"], "home")),
        name=" ".join(scalars["name"]),
    )


def chain_to_text(chain: KinematicChain) -> str:
    """Canonical serialization; used for hashing programmatic chains."""
    lines = [
        f"name {chain.name}",
        f"reach {chain.reach_min!r} {chain.reach_max!r}",
        f"end_effector_dims {chain.end_effector_dims[0]!r} {chain.end_effector_dims[1]!r}",
        "link_radii " + " ".join(repr(r) for r in chain.link_radii),
        "home " + " ".join(repr(a) for a in chain.home),
    ]
    for j, lo, hi in zip(chain.joints, chain.limits.min_angles, chain.limits.max_angles):
        p, q, a = j.transform.position, j.transform.orientation, j.axis
        lines.append(
            f"joint {p.x!r} {p.y!r} {p.z!r} {q.x!r} {q.y!r} {q.z!r} {q.w!r} "
            f"{a.x!r} {a.y!r} {a.z!r} {lo!r} {hi!r}"
        )
    p, q = chain.tool.position, chain.tool.orientation
    lines.append(f"tool {p.x!r} {p.y!r} {p.z!r} {q.x!r} {q.y!r} {q.z!r} {q.w!r}")
    return "\n".join(lines) + "\n"
