"""Reduced-order physics backend.

The base is a single rigid body (combined trunk mass plus the arm as a point
mass at the EE) driven by gravity, external disturbances, and per-foot
contact forces. Leg and arm joints are torque-limited second-order
integrators tracking the latched hybrid command; feet hang off the base at
their FK positions (quasi-static legs: joint motion moves the contact
points, contact forces act on the base and react back into the joint
integrators as J^T F, which is what makes torque-based contact estimation
meaningful).

Two contact models:
  RIGID_IMPULSE   velocity-level sequential impulses with restitution and a
                  Coulomb cone, exact non-penetration via position
                  projection. Can chatter under asymmetric loading.
  SOFT_CONSTRAINT spring-damper normal force; tangential force from a stiff
                  anchored spring whose anchor creeps toward the foot with
                  time constant tau0 * impratio (Maxwell viscoelasticity).
                  Low impratio lets sustained tangential load drag the
                  anchor: foot drift. High impratio pins it.

Determinism: the only randomness is the backend-owned generator used for
sensor noise and actuation latency, seeded at construction. Identical
(seed, config, command stream) gives bit-identical trajectories.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import quat_from_omega, quat_multiply, quat_normalize, quat_to_matrix
from ..kinematics import EEPose, arm_fk, leg_fk, leg_jacobian, solve_arm_ik
from ..model import (
    N_ARM_JOINTS,
    N_JOINTS,
    N_LEG_JOINTS,
    N_LEGS,
    HybridJointCommand,
    RobotModel,
    StackConfig,
)
from ..rlmath import DRParams
from . import RobotSnapshot, SimTruth


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross has crushing overhead for single 3-vectors; this is the sim's
    # innermost operation
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


class ContactMode(enum.Enum):
    RIGID_IMPULSE = "rigid"
    SOFT_CONSTRAINT = "soft"


@dataclass(frozen=True)
class ContactModelConfig:
    mode: ContactMode = ContactMode.RIGID_IMPULSE
    friction: float = 0.7  # Coulomb mu
    restitution: float = 0.0  # rigid mode only
    impratio: float = 1.0  # soft mode only, >= 1
    normal_stiffness: float = 3.0e4  # N/m
    normal_damping: float = 8.0e2  # N*s/m (rotational explicit-stability bound)
    tangential_stiffness: float = 1.5e4  # N/m
    tangential_damping: float = 5.0e2  # N*s/m
    creep_time_constant: float = 0.02  # s, anchor relaxation at impratio 1
    activation_slop: float = 3e-3  # m, rigid mode engages feet this close to ground
    baumgarte: float = 0.2  # rigid-mode penetration push-out fraction per step

    def __post_init__(self):
        if self.friction <= 0:
            raise ValueError("friction must be > 0")
        if self.impratio < 1.0:
            raise ValueError("impratio must be >= 1")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")


@dataclass(frozen=True)
class SimParams:
    gravity: float = 9.81  # m/s^2
    joint_inertia: float = 0.4  # kg*m^2 reflected inertia per joint
    joint_damping: float = 1.0  # N*m*s/rad passive
    impulse_iterations: int = 10
    sub_steps: int | None = None  # None: 1 for rigid, 4 for soft (explicit
    # spring damping at the raw 200 Hz step is unstable in the pitch mode)
    start_height: float | None = None  # None: default-pose feet exactly on ground


class SimNaNError(RuntimeError):
    def __init__(self, message: str, state: dict):
        super().__init__(message)
        self.state = state


class ArmMode(enum.Enum):
    DYNAMIC = "dynamic"  # arm joints integrate like legs
    FAKE = "fake"  # synthetic IK-driven arm states


class FakeArm:
    """Synthetic arm-state generator for the arm-less robot variant.

    Tracks the EE goal setpoint with the IK solver, advancing at most one
    slew-limited joint step per update; velocities come from finite
    differences and torques are zero. A failed solve holds the last pose and
    lowers the converged flag.
    """

    def __init__(self, model: RobotModel, slew_rad_s: float = 2.0):
        self._model = model
        sl = model.arm_slice()
        self._lo = model.joint_limits.q_lower[sl]
        self._hi = model.joint_limits.q_upper[sl]
        self.q = model.default_pose[sl].copy()
        self.dq = np.zeros(N_ARM_JOINTS)
        self.converged = True
        self._slew = slew_rad_s

    def update(self, goal: EEPose, dt: float) -> tuple[np.ndarray, np.ndarray, bool]:
        res = solve_arm_ik(
            self._model.arm_params, goal, self.q, self._lo, self._hi, max_iter=20, tol=1e-6
        )
        if res.converged or res.position_residual < 0.05:
            step = np.clip(res.q - self.q, -self._slew * dt, self._slew * dt)
            q_new = self.q + step
            self.converged = True
        else:
            q_new = self.q.copy()
            self.converged = False
        self.dq = (q_new - self.q) / dt if dt > 0 else np.zeros(N_ARM_JOINTS)
        self.q = q_new
        return self.q.copy(), self.dq.copy(), self.converged


class SimBackend:
    """Reduced-order simulation backend implementing the HAL contract."""

    def __init__(
        self,
        model: RobotModel,
        config: StackConfig,
        contact: ContactModelConfig | None = None,
        dr: DRParams | None = None,
        params: SimParams | None = None,
        arm_mode: ArmMode = ArmMode.DYNAMIC,
        seed: int | None = None,
    ):
        self.model = model
        self.config = config
        self.contact = contact or ContactModelConfig()
        self.dr = dr or DRParams.nominal()
        self.params = params or SimParams()
        self.arm_mode = arm_mode
        self._rng = np.random.default_rng(config.seed if seed is None else seed)

        self._mass = model.mass_props.base_mass + self.dr.base_mass_delta
        self._arm_mass = model.mass_props.arm_mass
        self._total_mass = self._mass + self._arm_mass
        self._inertia = model.mass_props.inertia_diag.copy()

        # joint state
        self.q = model.default_pose.copy()
        self.dq = np.zeros(N_JOINTS)
        self._tau_applied = np.zeros(N_JOINTS)

        # base state: CoM position/velocity in world, orientation, body-frame omega
        self._com_trunk = self._compute_com_trunk()
        stand_h = self.params.start_height
        if stand_h is None:
            foot_z = min(leg_fk(model.leg_params[i], self.q[model.leg_slice(i)])[2] for i in range(N_LEGS))
            stand_h = -foot_z
        origin = np.array([0.0, 0.0, stand_h])
        self.quat = np.array([1.0, 0.0, 0.0, 0.0])
        self.pos_com = origin + quat_to_matrix(self.quat) @ self._com_trunk
        self.vel_com = np.zeros(3)
        self.omega_body = np.zeros(3)
        self._prev_vel_com = np.zeros(3)

        # contact bookkeeping
        self._anchors = np.zeros((N_LEGS, 2))
        self._in_contact = [False] * N_LEGS
        self._foot_forces_world = np.zeros((N_LEGS, 3))

        self._external_force = np.zeros(3)  # world, applied at CoM
        self._external_torque = np.zeros(3)  # world

        self._cmd = HybridJointCommand.zero()
        self._cmd_queue: list[HybridJointCommand] = []
        self._fake_arm = FakeArm(model) if arm_mode == ArmMode.FAKE else None
        self._fake_goal = EEPose(position=arm_fk(model.arm_params, model.default_pose[model.arm_slice()])[0], rpy=np.zeros(3))

        self.t = 0.0
        self._hash = hashlib.sha256()
        self._snapshot = self._make_snapshot()

    # -- HAL contract ---------------------------------------------------------

    def read_state(self) -> RobotSnapshot:
        return self._snapshot

    def write_command(self, cmd: HybridJointCommand) -> None:
        if self.dr.latency_ticks > 0:
            self._cmd_queue.append(cmd)
            if len(self._cmd_queue) > self.dr.latency_ticks:
                self._cmd = self._cmd_queue.pop(0)
        else:
            self._cmd = cmd

    def set_external_push(self, force_world: np.ndarray, torque_world: np.ndarray | None = None) -> None:
        """Constant disturbance wrench at the CoM (used by bench trials)."""
        self._external_force = np.asarray(force_world, dtype=float).copy()
        self._external_torque = (
            np.zeros(3) if torque_world is None else np.asarray(torque_world, dtype=float).copy()
        )

    def set_fake_arm_goal(self, goal: EEPose) -> None:
        self._fake_goal = goal

    # -- stepping ---------------------------------------------------------------

    def step(self, dt: float) -> None:
        # joint dynamics once per step (decoupled, stable at the physics rate);
        # base + contact dynamics substep for explicit-integration stability
        tau_motor = self._pd_torques(self._cmd)
        damping = self.params.joint_damping * self.dr.joint_damping_scale
        ddq = (tau_motor - damping * self.dq) / self.params.joint_inertia
        new_dq = np.clip(
            self.dq + dt * ddq, -self.model.joint_limits.dq_max, self.model.joint_limits.dq_max
        )
        new_q = self.q + dt * new_dq
        lo, hi = self.model.joint_limits.q_lower, self.model.joint_limits.q_upper
        hit_lo, hit_hi = new_q < lo, new_q > hi
        new_q = np.clip(new_q, lo, hi)
        new_dq[hit_lo & (new_dq < 0)] = 0.0
        new_dq[hit_hi & (new_dq > 0)] = 0.0
        self.q, self.dq = new_q, new_dq

        if self._fake_arm is not None:
            q_arm, dq_arm, _ = self._fake_arm.update(self._fake_goal, dt)
            sl = self.model.arm_slice()
            self.q[sl] = q_arm
            self.dq[sl] = dq_arm

        # leg kinematics frozen across the substeps (quasi-static legs)
        foot_pos_rel = np.zeros((N_LEGS, 3))
        foot_sweep_body = np.zeros((N_LEGS, 3))
        leg_jacs = []
        for i in range(N_LEGS):
            sl = self.model.leg_slice(i)
            jac = leg_jacobian(self.model.leg_params[i], self.q[sl])
            leg_jacs.append(jac)
            foot_pos_rel[i] = leg_fk(self.model.leg_params[i], self.q[sl])
            foot_sweep_body[i] = jac @ self.dq[sl]

        if self.params.sub_steps is not None:
            sub = max(1, int(self.params.sub_steps))
        else:
            sub = 1 if self.contact.mode == ContactMode.RIGID_IMPULSE else 4
        force_sum = np.zeros((N_LEGS, 3))
        for _ in range(sub):
            self._base_substep(dt / sub, foot_pos_rel, foot_sweep_body)
            force_sum += self._foot_forces_world
        self._foot_forces_world = force_sum / sub

        # torque sensor model: tracking torque plus the static share of the
        # contact load (tau = -J^T F at stance equilibrium), limit-clamped
        # like a real actuator reading
        tau_sensor = tau_motor.copy()
        r_wb = quat_to_matrix(self.quat)
        for i in range(N_LEGS):
            sl = self.model.leg_slice(i)
            tau_sensor[sl] -= leg_jacs[i].T @ (r_wb.T @ self._foot_forces_world[i])
        self._tau_applied = np.clip(
            tau_sensor, -self.model.joint_limits.tau_max, self.model.joint_limits.tau_max
        )
        if self._fake_arm is not None:
            self._tau_applied[self.model.arm_slice()] = 0.0

        # the arm's point mass shifts the CoM inside the trunk frame
        self._com_trunk = self._compute_com_trunk()

        self.t += dt
        self._prev_accel = (self.vel_com - self._prev_vel_com) / dt
        self._prev_vel_com = self.vel_com.copy()
        self._snapshot = self._make_snapshot()
        self._check_finite()
        self._hash.update(
            np.concatenate(
                [self.pos_com, self.vel_com, self.quat, self.omega_body, self.q, self.dq]
            ).tobytes()
        )

    def _base_substep(self, dt: float, foot_pos_rel: np.ndarray, foot_sweep_body: np.ndarray) -> None:
        r_wb = quat_to_matrix(self.quat)
        trunk_origin = self.pos_com - r_wb @ self._com_trunk
        foot_pos_w = trunk_origin + foot_pos_rel @ r_wb.T
        foot_vel_sweep = foot_sweep_body @ r_wb.T

        omega_world = r_wb @ self.omega_body
        inertia_world_inv = r_wb @ np.diag(1.0 / self._inertia) @ r_wb.T

        gravity = np.array([0.0, 0.0, -self.params.gravity])
        force_acc = self._total_mass * gravity + self._external_force
        torque_acc = self._external_torque.copy()

        self._foot_forces_world = np.zeros((N_LEGS, 3))

        if self.contact.mode == ContactMode.SOFT_CONSTRAINT:
            # damping forces are capped so one explicit substep can never
            # reverse the velocity they oppose (quarter-mass heuristic)
            damp_cap_mass = self._total_mass / (4.0 * dt)
            for i in range(N_LEGS):
                pen = -foot_pos_w[i, 2]
                if pen <= 0.0:
                    self._in_contact[i] = False
                    continue
                r = foot_pos_w[i] - self.pos_com
                v_foot = self.vel_com + _cross3(omega_world, r) + foot_vel_sweep[i]
                f_damp = -self.contact.normal_damping * v_foot[2]
                f_damp = float(
                    np.clip(f_damp, -damp_cap_mass * abs(v_foot[2]), damp_cap_mass * abs(v_foot[2]))
                )
                f_n = max(self.contact.normal_stiffness * pen + f_damp, 0.0)
                if not self._in_contact[i]:
                    self._anchors[i] = foot_pos_w[i, :2]
                    self._in_contact[i] = True
                disp = foot_pos_w[i, :2] - self._anchors[i]
                t_damp = -self.contact.tangential_damping * v_foot[:2]
                t_cap = damp_cap_mass * np.abs(v_foot[:2])
                t_damp = np.clip(t_damp, -t_cap, t_cap)
                f_t = -self.contact.tangential_stiffness * disp + t_damp
                limit = self.contact.friction * f_n
                mag = float(np.linalg.norm(f_t))
                if mag > limit and mag > 1e-12:
                    f_t *= limit / mag
                    # anchor snaps to the cone boundary (sliding)
                    self._anchors[i] = foot_pos_w[i, :2] + f_t / self.contact.tangential_stiffness
                # viscoelastic creep: the anchor relaxes toward the foot
                tau_relax = self.contact.creep_time_constant * self.contact.impratio
                self._anchors[i] += (foot_pos_w[i, :2] - self._anchors[i]) * min(1.0, dt / tau_relax)
                f = np.array([f_t[0], f_t[1], f_n])
                self._foot_forces_world[i] = f
                force_acc += f
                torque_acc += _cross3(r, f)

            # integrate base (semi-implicit)
            self.vel_com = self.vel_com + dt * force_acc / self._total_mass
            torque_body = r_wb.T @ torque_acc
            omega_dot = (
                torque_body - _cross3(self.omega_body, self._inertia * self.omega_body)
            ) / self._inertia
            self.omega_body = self.omega_body + dt * omega_dot
            self.pos_com = self.pos_com + dt * self.vel_com
            self.quat = quat_normalize(quat_multiply(self.quat, quat_from_omega(self.omega_body, dt)))

        else:  # RIGID_IMPULSE
            # free integration of velocities first
            self.vel_com = self.vel_com + dt * force_acc / self._total_mass
            torque_body = r_wb.T @ torque_acc
            omega_dot = (
                torque_body - _cross3(self.omega_body, self._inertia * self.omega_body)
            ) / self._inertia
            self.omega_body = self.omega_body + dt * omega_dot
            omega_world = r_wb @ self.omega_body

            gaps = foot_pos_w[:, 2]  # height above ground; negative = penetrating
            active = [i for i in range(N_LEGS) if gaps[i] < self.contact.activation_slop]
            pre_vn = {}
            r_c = {}
            k_nn = {}
            targets = {}
            n = np.array([0.0, 0.0, 1.0])
            for i in active:
                r = foot_pos_w[i] - self.pos_com
                r_c[i] = r
                v_foot = self.vel_com + _cross3(omega_world, r) + foot_vel_sweep[i]
                pre_vn[i] = v_foot[2]
                k_nn[i] = 1.0 / self._total_mass + n @ _cross3(inertia_world_inv @ _cross3(r, n), r)
                # speculative target: a separated foot may approach only fast
                # enough to land this substep; a penetrated one is pushed out
                # by the Baumgarte fraction plus restitution
                gap = gaps[i]
                if gap >= 0.0:
                    targets[i] = -gap / dt
                else:
                    targets[i] = max(
                        self.contact.baumgarte * (-gap) / dt,
                        -self.contact.restitution * min(pre_vn[i], 0.0),
                    )
            jn_acc = {i: 0.0 for i in active}
            jt_acc = {i: np.zeros(2) for i in active}
            for sweep in range(self.params.impulse_iterations):
                # alternate iteration order to reduce sequential-solver bias
                order = active if sweep % 2 == 0 else list(reversed(active))
                biggest = 0.0
                for i in order:
                    r = r_c[i]
                    v_foot = self.vel_com + _cross3(omega_world, r) + foot_vel_sweep[i]
                    dj = (targets[i] - v_foot[2]) / k_nn[i]
                    new_acc = max(0.0, jn_acc[i] + dj)
                    dj = new_acc - jn_acc[i]
                    jn_acc[i] = new_acc
                    biggest = max(biggest, abs(dj))
                    imp = dj * n
                    self.vel_com = self.vel_com + imp / self._total_mass
                    omega_world = omega_world + inertia_world_inv @ _cross3(r, imp)
                    # friction: cancel tangential velocity within the cone
                    v_foot = self.vel_com + _cross3(omega_world, r) + foot_vel_sweep[i]
                    v_t = v_foot[:2]
                    sp = math.hypot(v_t[0], v_t[1])
                    if sp > 1e-12:
                        tdir = np.array([v_t[0] / sp, v_t[1] / sp, 0.0])
                        k_t = 1.0 / self._total_mass + tdir @ _cross3(
                            inertia_world_inv @ _cross3(r, tdir), r
                        )
                        dj_t = -sp / k_t
                        cand = jt_acc[i] + dj_t * tdir[:2]
                        limit = self.contact.friction * jn_acc[i]
                        mag = math.hypot(cand[0], cand[1])
                        if mag > limit:
                            cand *= limit / max(mag, 1e-12)
                        delta = cand - jt_acc[i]
                        jt_acc[i] = cand
                        biggest = max(biggest, abs(delta[0]), abs(delta[1]))
                        imp_t = np.array([delta[0], delta[1], 0.0])
                        self.vel_com = self.vel_com + imp_t / self._total_mass
                        omega_world = omega_world + inertia_world_inv @ _cross3(r, imp_t)
                if biggest < 1e-10:
                    break
            for i in range(N_LEGS):
                if i in jn_acc:
                    self._in_contact[i] = jn_acc[i] > 0.0
                    self._foot_forces_world[i] = (
                        np.array([jt_acc[i][0], jt_acc[i][1], jn_acc[i]]) / dt
                    )
                else:
                    self._in_contact[i] = False

            self.omega_body = r_wb.T @ omega_world
            self.pos_com = self.pos_com + dt * self.vel_com
            self.quat = quat_normalize(quat_multiply(self.quat, quat_from_omega(self.omega_body, dt)))
            # exact non-penetration: project the deepest foot back to the surface
            r_wb2 = quat_to_matrix(self.quat)
            trunk2 = self.pos_com - r_wb2 @ self._com_trunk
            foot_after = trunk2 + foot_pos_rel @ r_wb2.T
            deepest = float(np.min(foot_after[:, 2]))
            if deepest < 0.0:
                self.pos_com[2] -= deepest

    def _pd_torques(self, cmd: HybridJointCommand) -> np.ndarray:
        tau = cmd.kp * (cmd.q_des - self.q) + cmd.kd * (cmd.dq_des - self.dq) + cmd.tau_ff
        return np.clip(tau, -self.model.joint_limits.tau_max, self.model.joint_limits.tau_max)

    def _compute_com_trunk(self) -> np.ndarray:
        ee_pos, _ = arm_fk(self.model.arm_params, self.q[self.model.arm_slice()])
        base_com = self.model.mass_props.com_offset + self.dr.com_delta
        return (self._mass * base_com + self._arm_mass * ee_pos) / self._total_mass

    def _make_snapshot(self) -> RobotSnapshot:
        r_wb = quat_to_matrix(self.quat)
        trunk_origin = self.pos_com - r_wb @ self._com_trunk
        foot_pos_w = np.array(
            [
                trunk_origin + r_wb @ leg_fk(self.model.leg_params[i], self.q[self.model.leg_slice(i)])
                for i in range(N_LEGS)
            ]
        )
        accel = getattr(self, "_prev_accel", np.zeros(3))
        gravity_vec = np.array([0.0, 0.0, -self.params.gravity])
        noise = self.dr
        q_meas = self.q.copy()
        dq_meas = self.dq.copy()
        gyro = self.omega_body.copy()
        acc = r_wb.T @ (accel - gravity_vec)
        if noise.noise_q_std > 0:
            q_meas = q_meas + self._rng.normal(0.0, noise.noise_q_std, N_JOINTS)
        if noise.noise_dq_std > 0:
            dq_meas = dq_meas + self._rng.normal(0.0, noise.noise_dq_std, N_JOINTS)
        if noise.noise_gyro_std > 0:
            gyro = gyro + self._rng.normal(0.0, noise.noise_gyro_std, 3)
        if noise.noise_acc_std > 0:
            acc = acc + self._rng.normal(0.0, noise.noise_acc_std, 3)
        vel_trunk_origin = self.vel_com + _cross3(r_wb @ self.omega_body, trunk_origin - self.pos_com)
        truth = SimTruth(
            base_pos=trunk_origin,
            base_quat=self.quat.copy(),
            base_vel_world=vel_trunk_origin,
            base_vel_body=r_wb.T @ vel_trunk_origin,
            omega_body=self.omega_body.copy(),
            foot_forces_world=self._foot_forces_world.copy(),
            foot_contacts=tuple(bool(c) for c in self._in_contact),
            foot_positions_world=foot_pos_w,
        )
        return RobotSnapshot(
            t=self.t,
            q=q_meas,
            dq=dq_meas,
            tau=self._tau_applied.copy(),
            quat=self.quat.copy(),
            gyro=gyro,
            acc=acc,
            truth=truth,
        )

    def _check_finite(self) -> None:
        for name, arr in (
            ("pos_com", self.pos_com),
            ("vel_com", self.vel_com),
            ("quat", self.quat),
            ("omega", self.omega_body),
            ("q", self.q),
            ("dq", self.dq),
        ):
            if not np.all(np.isfinite(arr)):
                raise SimNaNError(
                    f"non-finite simulation state in {name} at t={self.t:.4f}",
                    state={
                        "t": self.t,
                        "pos_com": self.pos_com.tolist(),
                        "vel_com": self.vel_com.tolist(),
                        "quat": self.quat.tolist(),
                        "omega_body": self.omega_body.tolist(),
                        "q": self.q.tolist(),
                        "dq": self.dq.tolist(),
                    },
                )

    # -- instrumentation ----------------------------------------------------------

    def trajectory_hash(self) -> str:
        return self._hash.hexdigest()

    def mechanical_energy(self) -> float:
        """KE + gravitational PE + contact spring PE (soft mode)."""
        ke = 0.5 * self._total_mass * float(self.vel_com @ self.vel_com)
        ke += 0.5 * float(self.omega_body @ (self._inertia * self.omega_body))
        ke += 0.5 * self.params.joint_inertia * float(self.dq @ self.dq)
        pe = self._total_mass * self.params.gravity * float(self.pos_com[2])
        spring = 0.0
        if self.contact.mode == ContactMode.SOFT_CONSTRAINT:
            r_wb = quat_to_matrix(self.quat)
            trunk_origin = self.pos_com - r_wb @ self._com_trunk
            for i in range(N_LEGS):
                foot = trunk_origin + r_wb @ leg_fk(
                    self.model.leg_params[i], self.q[self.model.leg_slice(i)]
                )
                pen = -foot[2]
                if pen > 0:
                    spring += 0.5 * self.contact.normal_stiffness * pen * pen
                    if self._in_contact[i]:
                        disp = foot[:2] - self._anchors[i]
                        spring += 0.5 * self.contact.tangential_stiffness * float(disp @ disp)
        return ke + pe + spring

    def foot_positions_world(self) -> np.ndarray:
        return self._snapshot.truth.foot_positions_world.copy()
