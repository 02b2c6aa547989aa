"""Rotation and angle helpers shared by kinematics, simulation, and control.

Conventions used throughout the stack:
  - rotation matrices map body-frame vectors into the parent frame
  - quaternions are (w, x, y, z), unit norm
  - roll-pitch-yaw is the extrinsic x-y-z convention, R = Rz(yaw) @ Ry(pitch) @ Rx(roll)
"""

from __future__ import annotations

import math

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def drot_x(a: float) -> np.ndarray:
    """d/da of rot_x(a)."""
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def drot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    axis = np.asarray(axis, dtype=float)
    k = skew(axis)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rpy_to_matrix(rpy: np.ndarray) -> np.ndarray:
    r, p, y = float(rpy[0]), float(rpy[1]), float(rpy[2])
    return rot_z(y) @ rot_y(p) @ rot_x(r)


def matrix_to_rpy(r_mat: np.ndarray) -> np.ndarray:
    """Inverse of rpy_to_matrix; pitch folded into [-pi/2, pi/2]."""
    pitch = math.atan2(-r_mat[2, 0], math.hypot(r_mat[2, 1], r_mat[2, 2]))
    roll = math.atan2(r_mat[2, 1], r_mat[2, 2])
    yaw = math.atan2(r_mat[1, 0], r_mat[0, 0])
    return np.array([roll, pitch, yaw])


def rotation_log(r_mat: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (the so(3) log)."""
    cos_a = (np.trace(r_mat) - 1.0) / 2.0
    cos_a = min(1.0, max(-1.0, cos_a))
    angle = math.acos(cos_a)
    if angle < 1e-9:
        return np.zeros(3)
    if angle > math.pi - 1e-6:
        # near pi the off-diagonal extraction degenerates; use the diagonal
        axis_sq = (np.diag(r_mat) + 1.0) / 2.0
        axis = np.sqrt(np.maximum(axis_sq, 0.0))
        # fix signs from the off-diagonal terms
        if r_mat[0, 1] + r_mat[1, 0] < 0.0:
            axis[1] = -axis[1]
        if r_mat[0, 2] + r_mat[2, 0] < 0.0:
            axis[2] = -axis[2]
        n = np.linalg.norm(axis)
        if n < 1e-12:
            return np.zeros(3)
        return angle * axis / n
    vee = np.array(
        [r_mat[2, 1] - r_mat[1, 2], r_mat[0, 2] - r_mat[2, 0], r_mat[1, 0] - r_mat[0, 1]]
    )
    return angle / (2.0 * math.sin(angle)) * vee


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return q / n


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_omega(omega: np.ndarray, dt: float) -> np.ndarray:
    """Incremental rotation quaternion for angular velocity omega over dt."""
    th = float(np.linalg.norm(omega)) * dt
    if th < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = np.asarray(omega, dtype=float) / np.linalg.norm(omega)
    half = 0.5 * th
    return np.array([math.cos(half), *(math.sin(half) * axis)])


def gravity_in_body(quat_wxyz: np.ndarray) -> np.ndarray:
    """Unit gravity direction expressed in the body frame."""
    r_wb = quat_to_matrix(quat_wxyz)
    return r_wb.T @ np.array([0.0, 0.0, -1.0])
