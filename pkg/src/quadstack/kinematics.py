"""Forward kinematics, Jacobians, and damped-least-squares IK.

Leg chain (per leg): hip roll about x, hip pitch about y, knee pitch about y,
links l1 (thigh) and l2 (shank) hanging along -z at zero angles. The mirror
sign flips hip roll so positive roll abducts outward on both body sides.

Arm chain: six revolute joints, each preceded by a fixed translation, plus a
tool offset. All poses are expressed in the trunk frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    axis_angle_matrix,
    drot_x,
    drot_y,
    matrix_to_rpy,
    rot_x,
    rot_y,
    rot_z,
    rotation_log,
    rpy_to_matrix,
    wrap_angle,
)
from .model import ArmParams, LegParams

DEFAULT_PINV_CUTOFF = 1e-4
DEFAULT_DLS_LAMBDA = 0.05


@dataclass(frozen=True)
class EEPose:
    """End-effector pose in the trunk frame: position + roll-pitch-yaw."""

    position: np.ndarray  # (3,) m
    rpy: np.ndarray  # (3,) rad, each wrapped to (-pi, pi]

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        rpy = np.array([wrap_angle(a) for a in np.asarray(self.rpy, dtype=float)])
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(rpy))):
            raise ValueError("EEPose requires finite position and angles")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rpy", rpy)

    def rotation(self) -> np.ndarray:
        return rpy_to_matrix(self.rpy)

    @staticmethod
    def from_matrix(position: np.ndarray, r_mat: np.ndarray) -> "EEPose":
        return EEPose(position=np.asarray(position, dtype=float), rpy=matrix_to_rpy(r_mat))


def leg_fk(leg: LegParams, q: np.ndarray) -> np.ndarray:
    """Foot position in the trunk frame for leg joint angles (roll, pitch, knee)."""
    q0, q1, q2 = float(q[0]), float(q[1]), float(q[2])
    u = rot_y(q1) @ np.array([0.0, 0.0, -leg.l1]) + rot_y(q1 + q2) @ np.array([0.0, 0.0, -leg.l2])
    return leg.hip_offset + rot_x(leg.mirror * q0) @ u


def leg_jacobian(leg: LegParams, q: np.ndarray) -> np.ndarray:
    """3x3 foot-velocity Jacobian d(foot)/dq, analytic."""
    q0, q1, q2 = float(q[0]), float(q[1]), float(q[2])
    a1 = np.array([0.0, 0.0, -leg.l1])
    a2 = np.array([0.0, 0.0, -leg.l2])
    u = rot_y(q1) @ a1 + rot_y(q1 + q2) @ a2
    rx = rot_x(leg.mirror * q0)
    col0 = leg.mirror * (drot_x(leg.mirror * q0) @ u)
    col1 = rx @ (drot_y(q1) @ a1 + drot_y(q1 + q2) @ a2)
    col2 = rx @ (drot_y(q1 + q2) @ a2)
    return np.column_stack([col0, col1, col2])


def leg_ik(leg: LegParams, foot: np.ndarray) -> np.ndarray:
    """Closed-form leg IK (knee-back branch, q2 <= 0). Unreachable targets are
    projected onto the reachable sphere shell before solving."""
    p = np.asarray(foot, dtype=float) - leg.hip_offset
    # hip roll from the (y, z) components; the sagittal chain keeps y = 0.
    # Roll is ambiguous by pi (foot below vs above the roll axis); pick the
    # branch with |roll| <= pi/2, which covers the physical roll range.
    r = math.hypot(p[1], p[2])
    q0 = math.atan2(p[1], -p[2]) if r > 1e-12 else 0.0
    uz = -r
    if abs(q0) > math.pi / 2:
        q0 = wrap_angle(q0 + math.pi)
        uz = r
    ux = p[0]  # sagittal-plane coordinates (ux, uz)
    d = math.hypot(ux, uz)
    d_max = leg.l1 + leg.l2 - 1e-9
    d_min = abs(leg.l1 - leg.l2) + 1e-9
    d_c = min(max(d, d_min), d_max)
    if d > 1e-12 and d_c != d:
        ux, uz = ux * d_c / d, uz * d_c / d
        d = d_c
    cos_knee = (d * d - leg.l1**2 - leg.l2**2) / (2.0 * leg.l1 * leg.l2)
    cos_knee = min(1.0, max(-1.0, cos_knee))
    q2 = -math.acos(cos_knee)
    # sagittal chain: ux = -l1 sin(q1) - l2 sin(q1+q2), uz = -l1 cos(q1) - l2 cos(q1+q2)
    q1 = math.atan2(-ux, -uz) - math.atan2(leg.l2 * math.sin(q2), leg.l1 + leg.l2 * math.cos(q2))
    return np.array([leg.mirror * q0, q1, q2])


def arm_fk(arm: ArmParams, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """EE position and rotation matrix in the trunk frame."""
    r = np.eye(3)
    p = np.zeros(3)
    for i in range(6):
        p = p + r @ arm.joint_offsets[i]
        r = r @ axis_angle_matrix(arm.joint_axes[i], float(q[i]))
    p = p + r @ arm.tool_offset
    return p, r


def arm_jacobian(arm: ArmParams, q: np.ndarray) -> np.ndarray:
    """6x6 geometric Jacobian: rows 0..2 linear, rows 3..5 angular."""
    r = np.eye(3)
    p = np.zeros(3)
    origins = []
    axes_world = []
    for i in range(6):
        p = p + r @ arm.joint_offsets[i]
        origins.append(p)
        r = r @ axis_angle_matrix(arm.joint_axes[i], float(q[i]))
        axes_world.append(r @ arm.joint_axes[i])
    p_ee = p + r @ arm.tool_offset
    jac = np.zeros((6, 6))
    for i in range(6):
        w = axes_world[i]
        jac[:3, i] = np.cross(w, p_ee - origins[i])
        jac[3:, i] = w
    return jac


def svd_pinv(m: np.ndarray, rel_cutoff: float = DEFAULT_PINV_CUTOFF) -> np.ndarray:
    """Moore-Penrose pseudo-inverse; singular values below rel_cutoff * sigma_max
    are treated as exactly zero."""
    m = np.asarray(m, dtype=float)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m.shape[1], m.shape[0]))
    inv_s = np.where(s > rel_cutoff * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return vt.T @ (inv_s[:, None] * u.T)


def dls_step(jac: np.ndarray, err: np.ndarray, lam: float = DEFAULT_DLS_LAMBDA) -> np.ndarray:
    """Damped least-squares step: dq = J^T (J J^T + lam^2 I)^-1 err.

    lam = 0 falls back to the SVD pseudo-inverse so singular Jacobians stay total.
    """
    jac = np.asarray(jac, dtype=float)
    err = np.asarray(err, dtype=float)
    if lam < 0:
        raise ValueError("damping must be >= 0")
    if lam == 0.0:
        return svd_pinv(jac) @ err
    a = jac @ jac.T + (lam * lam) * np.eye(jac.shape[0])
    return jac.T @ np.linalg.solve(a, err)


def pose_error(target: EEPose, pos: np.ndarray, r_mat: np.ndarray, rot_weight: float) -> np.ndarray:
    """Stacked 6D task error: position on top, weighted axis-angle of
    R_target @ R_current^T below."""
    e_pos = target.position - pos
    e_rot = rotation_log(target.rotation() @ r_mat.T)
    return np.concatenate([e_pos, rot_weight * e_rot])


@dataclass
class IKResult:
    q: np.ndarray  # (6,) rad
    residual: float  # final task-error norm (position + weighted rotation)
    position_residual: float  # m
    iterations: int  # total across all restarts
    converged: bool
    residual_trace: list[float] = field(default_factory=list)


def _ik_descend(
    arm: ArmParams,
    target: EEPose,
    q0: np.ndarray,
    q_lower: np.ndarray,
    q_upper: np.ndarray,
    budget: int,
    tol: float,
    lam0: float,
    rot_weight: float,
) -> tuple[IKResult, int]:
    """One damped-least-squares descent with backtracking from a single start.

    Damping shrinks with the residual (Levenberg-style) so terminal convergence
    is Newton-like; steps that would increase the task error are halved before
    acceptance, which makes the residual trace non-increasing by construction.
    """
    q = np.clip(np.asarray(q0, dtype=float).copy(), q_lower, q_upper)
    pos, r_mat = arm_fk(arm, q)
    err = pose_error(target, pos, r_mat, rot_weight)
    res = float(np.linalg.norm(err))
    trace = [res]
    used = 0
    while used < budget and res > tol:
        jac = arm_jacobian(arm, q)
        jac[3:, :] *= rot_weight
        dq = dls_step(jac, err, min(lam0, max(res, 1e-6)))
        step = 1.0
        improved = False
        for _ in range(12):
            q_try = np.clip(q + step * dq, q_lower, q_upper)
            pos_try, r_try = arm_fk(arm, q_try)
            err_try = pose_error(target, pos_try, r_try, rot_weight)
            res_try = float(np.linalg.norm(err_try))
            if res_try < res:
                q, pos, r_mat, err, res = q_try, pos_try, r_try, err_try, res_try
                improved = True
                break
            step *= 0.5
        used += 1
        trace.append(res)
        if not improved:
            break  # stationary for this start (limits or singular direction)
    result = IKResult(
        q=q,
        residual=res,
        position_residual=float(np.linalg.norm(target.position - pos)),
        iterations=used,
        converged=res <= tol,
        residual_trace=trace,
    )
    return result, used


def _seed_library(q_lower: np.ndarray, q_upper: np.ndarray) -> np.ndarray:
    """Fixed coarse grid of restart postures spanning shoulder and wrist basins."""
    seeds = []
    for j1 in (-2.4, -1.2, 0.0, 1.2, 2.4):
        for j2 in (-1.2, 0.4, 1.2):
            for j3 in (0.7, 2.0):
                for j4 in (-1.6, 0.0, 1.6):
                    for j5 in (-1.2, 1.2):
                        seeds.append((j1, j2, j3, j4, j5, 0.0))
    return np.clip(np.array(seeds), q_lower, q_upper)


_WRIST_AXES = np.array([[0, 0, 1], [0, 1, 0], [0, 1, 0], [1, 0, 0], [0, 1, 0], [1, 0, 0]], dtype=float)


def analytic_arm_seeds(arm: ArmParams, target: EEPose) -> list[np.ndarray]:
    """Closed-form IK candidates for a wrist-partitioned z-y-y-x-y-x chain.

    Requires the last two joint offsets to vanish (roll-pitch-roll axes meeting
    at the wrist center) so the wrist center is target-determined. Returns the
    yaw/wrist branch combinations; empty for arms without this structure —
    the candidates only seed the numeric solver, they are never trusted as
    solutions.
    """
    if not np.array_equal(arm.joint_axes, _WRIST_AXES):
        return []
    if np.any(arm.joint_offsets[4] != 0.0) or np.any(arm.joint_offsets[5] != 0.0):
        return []

    r_t = target.rotation()
    wrist = target.position - r_t @ arm.tool_offset
    t1, t2, t3, t4 = (arm.joint_offsets[i] for i in range(4))
    if abs(t2[1]) > 1e-12 or abs(t3[1]) > 1e-12 or abs(t4[1]) > 1e-12:
        return []
    w = wrist - t1
    l1 = float(np.linalg.norm(t3))
    l2 = float(np.linalg.norm(t4))

    seeds: list[np.ndarray] = []
    yaw0 = math.atan2(w[1], w[0]) if (abs(w[0]) > 1e-12 or abs(w[1]) > 1e-12) else 0.0
    for yaw_branch in (0.0, math.pi):
        q1 = wrap_angle(yaw0 + yaw_branch)
        # planar radius is signed for the flipped-yaw branch
        r_xy = math.hypot(w[0], w[1]) * (1.0 if yaw_branch == 0.0 else -1.0)
        vx = r_xy - t2[0]
        vz = w[2] - t2[2]
        d_sq = vx * vx + vz * vz
        cos_elb = (d_sq - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
        cos_elb = min(1.0, max(-1.0, cos_elb))
        for q3 in (math.acos(cos_elb), -math.acos(cos_elb)):
            a = l1 + l2 * math.cos(q3)
            b = l2 * math.sin(q3)
            q2 = math.atan2(-vz, vx) - math.atan2(b, a)
            # wrist rotation: R_target = Rz(q1) Ry(q2+q3) Rx(q4) Ry(q5) Rx(q6)
            m = (rot_z(q1) @ rot_y(q2 + q3)).T @ r_t
            c5 = min(1.0, max(-1.0, float(m[0, 0])))
            for q5 in (math.acos(c5), -math.acos(c5)):
                s5 = math.sin(q5)
                if abs(s5) > 1e-9:
                    q4 = math.atan2(m[1, 0] / s5, -m[2, 0] / s5)
                    q6 = math.atan2(m[0, 1] / s5, m[0, 2] / s5)
                else:
                    q4 = math.atan2(m[2, 1], m[1, 1])
                    q6 = 0.0
                seeds.append(np.array([q1, wrap_angle(q2), wrap_angle(q3), q4, q5, q6]))
    return seeds


def solve_arm_ik(
    arm: ArmParams,
    target: EEPose,
    q0: np.ndarray,
    q_lower: np.ndarray,
    q_upper: np.ndarray,
    max_iter: int = 100,
    tol: float = 1e-5,
    lam: float = DEFAULT_DLS_LAMBDA,
    rot_weight: float = 0.5,
) -> IKResult:
    """Damped-least-squares IK on the stacked 6D pose error.

    Descends from the caller's ``q0`` first (warm start: if ``q0`` already
    meets ``tol`` it is returned with zero iterations). If that start stalls
    short of ``tol``, remaining iterations are spent descending from library
    seed postures ranked by initial task error — plain single-start DLS
    provably stalls at singular-direction stationary points for a large
    fraction of reachable poses. ``max_iter`` bounds the TOTAL iteration
    count across all starts. The returned trace is the accepted start's and
    is non-increasing; the best start by (converged, position residual,
    residual) wins.
    """
    # cap per-start descents so a slowly-creeping start cannot starve the
    # restarts of budget; converged warm starts (the teleop steady state)
    # return immediately
    per_start = max(10, max_iter // 3)
    best, used = _ik_descend(
        arm, target, q0, q_lower, q_upper, min(per_start, max_iter), tol, lam, rot_weight
    )
    if best.converged or used >= max_iter:
        best.iterations = used
        return best

    analytic = [np.clip(s, q_lower, q_upper) for s in analytic_arm_seeds(arm, target)]
    seeds = list(analytic) + list(_seed_library(q_lower, q_upper))
    scored = []
    for i, s in enumerate(seeds):
        pos, r_mat = arm_fk(arm, s)
        scored.append((float(np.linalg.norm(pose_error(target, pos, r_mat, rot_weight))), i))
    scored.sort()

    for _, i in scored:
        if used >= max_iter:
            break
        cand, spent = _ik_descend(
            arm, target, seeds[i], q_lower, q_upper, min(per_start, max_iter - used), tol, lam, rot_weight
        )
        used += spent
        if (cand.converged, -cand.position_residual, -cand.residual) > (
            best.converged,
            -best.position_residual,
            -best.residual,
        ):
            best = cand
        if best.converged:
            break
    best.iterations = used
    return best
