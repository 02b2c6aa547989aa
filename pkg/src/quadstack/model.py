"""Robot description and stack configuration.

Everything downstream (kinematics, simulation, control, bench) consumes the
validated ``RobotModel`` / ``StackConfig`` pair produced by ``load_config``.
Both are immutable after load and safe to share across threads.

The config file is a YAML tree with a ``schema_version`` field; the shipped
default lives in ``assets/default_config.yaml`` and documents every key.

Numeric robot parameters (link lengths, masses, gains) are plausible values
for a large quadruped with a torso-mounted 6-DoF arm. They are NOT vendor
data; the config file is the extension point for users with measured values.

Kinematic conventions (fixed here so FK examples are exactly testable):
  - leg joint order per leg: (hip roll, hip pitch, knee pitch)
  - zero leg angles = leg vertical under the hip, knee fully extended
  - arm zero pose = stowed straight forward along +x
  - leg order: FL, FR, RL, RR; full joint vector order: 12 leg + 6 arm + 1 gripper
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

SCHEMA_VERSION = 1
NS_PER_SEC = 1_000_000_000

N_LEGS = 4
N_LEG_JOINTS = 12
N_ARM_JOINTS = 6
N_JOINTS = 19  # 12 leg + 6 arm + 1 gripper

LEG_NAMES = ("FL", "FR", "RL", "RR")


class ConfigError(ValueError):
    """Config failed to parse or validate; message carries the field path."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


def _ro(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LegParams:
    """One leg: hip mount point in the trunk frame plus two link lengths.

    ``mirror`` flips the hip-roll direction so that positive roll abducts
    outward on both sides of the body.
    """

    hip_offset: np.ndarray  # (3,) m, trunk frame
    l1: float  # thigh length, m
    l2: float  # shank length, m
    mirror: float = 1.0  # +1 left side, -1 right side


@dataclass(frozen=True)
class ArmParams:
    """Serial 6-DoF arm: per-joint fixed translation + rotation axis, tool offset."""

    joint_offsets: np.ndarray  # (6, 3) m, translation preceding each joint
    joint_axes: np.ndarray  # (6, 3) unit rotation axes
    tool_offset: np.ndarray  # (3,) m, last joint frame -> gripper frame


@dataclass(frozen=True)
class JointLimits:
    q_lower: np.ndarray  # (19,) rad
    q_upper: np.ndarray  # (19,) rad
    dq_max: np.ndarray  # (19,) rad/s
    tau_max: np.ndarray  # (19,) N*m


@dataclass(frozen=True)
class MassProps:
    base_mass: float  # kg, trunk + legs lumped
    arm_mass: float  # kg, treated as a point mass at the EE
    com_offset: np.ndarray  # (3,) m, trunk-frame CoM offset of the base body
    inertia_diag: np.ndarray  # (3,) kg*m^2, base body inertia (diagonal)


@dataclass(frozen=True)
class RobotModel:
    leg_params: tuple[LegParams, ...]  # FL, FR, RL, RR
    arm_params: ArmParams
    joint_limits: JointLimits
    default_pose: np.ndarray  # (19,) rad
    kp: np.ndarray  # (19,) N*m/rad
    kd: np.ndarray  # (19,) N*m*s/rad
    mass_props: MassProps
    workspace_lower: np.ndarray  # (3,) m, EE goal box in trunk frame
    workspace_upper: np.ndarray  # (3,) m

    @property
    def total_mass(self) -> float:
        return self.mass_props.base_mass + self.mass_props.arm_mass

    def leg_slice(self, leg_index: int) -> slice:
        return slice(3 * leg_index, 3 * leg_index + 3)

    def arm_slice(self) -> slice:
        return slice(N_LEG_JOINTS, N_LEG_JOINTS + N_ARM_JOINTS)


@dataclass(frozen=True)
class HybridJointCommand:
    """Low-level command for all 19 joints: tau = kp*(q_des-q) + kd*(dq_des-dq) + tau_ff."""

    q_des: np.ndarray  # (19,) rad
    dq_des: np.ndarray  # (19,) rad/s
    kp: np.ndarray  # (19,) N*m/rad
    kd: np.ndarray  # (19,) N*m*s/rad
    tau_ff: np.ndarray  # (19,) N*m

    def __post_init__(self):
        for name in ("q_des", "dq_des", "kp", "kd", "tau_ff"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (N_JOINTS,):
                raise ValueError(f"{name} must have shape ({N_JOINTS},), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        if np.any(self.kp < 0) or np.any(self.kd < 0):
            raise ValueError("PD gains must be >= 0")

    @staticmethod
    def zero() -> "HybridJointCommand":
        z = np.zeros(N_JOINTS)
        return HybridJointCommand(q_des=z.copy(), dq_des=z.copy(), kp=z.copy(), kd=z.copy(), tau_ff=z.copy())

    @staticmethod
    def damping(kd: np.ndarray) -> "HybridJointCommand":
        z = np.zeros(N_JOINTS)
        return HybridJointCommand(q_des=z.copy(), dq_des=z.copy(), kp=z.copy(), kd=np.asarray(kd, dtype=float).copy(), tau_ff=z.copy())


@dataclass(frozen=True)
class TeleopLimits:
    max_v: float  # m/s, forward/lateral
    max_omega: float  # rad/s, yaw
    deadzone: float
    expo: float
    accel_limit: float  # m/s^2 rate limit on velocity commands
    omega_accel_limit: float  # rad/s^2
    ee_lin_rate: float  # m/s, arm-mode translation rate at full stick
    ee_ang_rate: float  # rad/s, arm-mode orientation rate


@dataclass(frozen=True)
class StackConfig:
    control_rate_hz: int
    physics_rate_hz: int
    policy_rate_hz: int
    contact_force_clamp: float  # N
    contact_threshold: float  # N
    teleop: TeleopLimits
    gait_frequency_hz: float
    action_scale: float  # rad, policy action to joint target
    ee_slew_linear: float  # m/s, goal-setpoint slew
    ee_slew_angular: float  # rad/s
    watchdog_ticks: int
    telemetry_rates_hz: dict[str, float] = field(default_factory=dict)
    telemetry_default_rate_hz: float = 20.0
    seed: int = 0

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_rate_hz

    @property
    def physics_dt(self) -> float:
        return 1.0 / self.physics_rate_hz

    @property
    def policy_dt(self) -> float:
        return 1.0 / self.policy_rate_hz


# -- validation -------------------------------------------------------------


def _require(tree: dict, key: str, path: str) -> Any:
    if key not in tree:
        raise ConfigError(f"{path}.{key}", "missing required field")
    return tree[key]


def _finite_scalar(value: Any, path: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {value!r}") from None
    if not math.isfinite(v):
        raise ConfigError(path, f"must be finite, got {v}")
    return v


def _finite_array(value: Any, shape: tuple[int, ...], path: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise ConfigError(path, f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(path, "contains NaN or inf")
    return arr


def _positive(value: float, path: str) -> float:
    if value <= 0:
        raise ConfigError(path, f"must be > 0, got {value}")
    return value


def _rate(value: Any, path: str) -> int:
    v = _finite_scalar(value, path)
    if v <= 0 or v != int(v):
        raise ConfigError(path, f"must be a positive integer rate in Hz, got {value}")
    r = int(v)
    if NS_PER_SEC % r != 0:
        raise ConfigError(
            path,
            f"{r} Hz has no exact integer-nanosecond period "
            f"(must divide {NS_PER_SEC}); the deterministic scheduler requires exact tick times",
        )
    return r


def _parse_leg(tree: dict, name: str, path: str) -> LegParams:
    hip = _finite_array(_require(tree, "hip_offset", path), (3,), f"{path}.hip_offset")
    l1 = _positive(_finite_scalar(_require(tree, "l1", path), f"{path}.l1"), f"{path}.l1")
    l2 = _positive(_finite_scalar(_require(tree, "l2", path), f"{path}.l2"), f"{path}.l2")
    mirror = _finite_scalar(tree.get("mirror", 1.0), f"{path}.mirror")
    if mirror not in (-1.0, 1.0):
        raise ConfigError(f"{path}.mirror", f"must be +1 or -1, got {mirror}")
    return LegParams(hip_offset=_ro(hip), l1=l1, l2=l2, mirror=mirror)


def _parse_arm(tree: dict, path: str) -> ArmParams:
    offsets = _finite_array(_require(tree, "joint_offsets", path), (6, 3), f"{path}.joint_offsets")
    axes = _finite_array(_require(tree, "joint_axes", path), (6, 3), f"{path}.joint_axes")
    norms = np.linalg.norm(axes, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ConfigError(f"{path}.joint_axes", "axes must be unit vectors")
    tool = _finite_array(_require(tree, "tool_offset", path), (3,), f"{path}.tool_offset")
    return ArmParams(joint_offsets=_ro(offsets), joint_axes=_ro(axes), tool_offset=_ro(tool))


def _parse_limits(tree: dict, path: str) -> JointLimits:
    lo = _finite_array(_require(tree, "q_lower", path), (N_JOINTS,), f"{path}.q_lower")
    hi = _finite_array(_require(tree, "q_upper", path), (N_JOINTS,), f"{path}.q_upper")
    if np.any(hi <= lo):
        bad = int(np.argmax(hi <= lo))
        raise ConfigError(f"{path}.q_upper[{bad}]", "limit interval must have positive width")
    dq = _finite_array(_require(tree, "dq_max", path), (N_JOINTS,), f"{path}.dq_max")
    tau = _finite_array(_require(tree, "tau_max", path), (N_JOINTS,), f"{path}.tau_max")
    if np.any(dq <= 0):
        raise ConfigError(f"{path}.dq_max", "velocity bounds must be > 0")
    if np.any(tau <= 0):
        raise ConfigError(f"{path}.tau_max", "torque bounds must be > 0")
    return JointLimits(q_lower=_ro(lo), q_upper=_ro(hi), dq_max=_ro(dq), tau_max=_ro(tau))


def _parse_robot(tree: dict) -> RobotModel:
    path = "robot"
    legs_tree = _require(tree, "legs", path)
    legs = tuple(
        _parse_leg(_require(legs_tree, name, f"{path}.legs"), name, f"{path}.legs.{name}")
        for name in LEG_NAMES
    )
    arm = _parse_arm(_require(tree, "arm", path), f"{path}.arm")
    limits = _parse_limits(_require(tree, "joint_limits", path), f"{path}.joint_limits")
    default_pose = _finite_array(
        _require(tree, "default_pose", path), (N_JOINTS,), f"{path}.default_pose"
    )
    if np.any(default_pose < limits.q_lower) or np.any(default_pose > limits.q_upper):
        bad = int(np.argmax((default_pose < limits.q_lower) | (default_pose > limits.q_upper)))
        raise ConfigError(f"{path}.default_pose[{bad}]", "outside joint limits")
    kp = _finite_array(_require(tree, "kp", path), (N_JOINTS,), f"{path}.kp")
    kd = _finite_array(_require(tree, "kd", path), (N_JOINTS,), f"{path}.kd")
    if np.any(kp < 0) or np.any(kd < 0):
        raise ConfigError(f"{path}.kp", "PD gains must be >= 0")

    mass_tree = _require(tree, "mass", path)
    mass = MassProps(
        base_mass=_positive(
            _finite_scalar(_require(mass_tree, "base_mass", f"{path}.mass"), f"{path}.mass.base_mass"),
            f"{path}.mass.base_mass",
        ),
        arm_mass=_positive(
            _finite_scalar(_require(mass_tree, "arm_mass", f"{path}.mass"), f"{path}.mass.arm_mass"),
            f"{path}.mass.arm_mass",
        ),
        com_offset=_ro(
            _finite_array(mass_tree.get("com_offset", [0, 0, 0]), (3,), f"{path}.mass.com_offset")
        ),
        inertia_diag=_ro(
            _finite_array(
                _require(mass_tree, "inertia_diag", f"{path}.mass"), (3,), f"{path}.mass.inertia_diag"
            )
        ),
    )
    if np.any(mass.inertia_diag <= 0):
        raise ConfigError(f"{path}.mass.inertia_diag", "must be > 0")

    ws = _require(tree, "workspace", path)
    lo = _finite_array(_require(ws, "lower", f"{path}.workspace"), (3,), f"{path}.workspace.lower")
    hi = _finite_array(_require(ws, "upper", f"{path}.workspace"), (3,), f"{path}.workspace.upper")
    if np.any(hi <= lo):
        raise ConfigError(f"{path}.workspace", "box must have positive extent on every axis")

    return RobotModel(
        leg_params=legs,
        arm_params=arm,
        joint_limits=limits,
        default_pose=_ro(default_pose),
        kp=_ro(kp),
        kd=_ro(kd),
        mass_props=mass,
        workspace_lower=_ro(lo),
        workspace_upper=_ro(hi),
    )


def _parse_stack(tree: dict) -> StackConfig:
    path = "stack"
    control = _rate(_require(tree, "control_rate_hz", path), f"{path}.control_rate_hz")
    physics = _rate(_require(tree, "physics_rate_hz", path), f"{path}.physics_rate_hz")
    policy = _rate(_require(tree, "policy_rate_hz", path), f"{path}.policy_rate_hz")
    if not control >= physics >= policy:
        raise ConfigError(
            f"{path}.control_rate_hz",
            f"rates must satisfy control >= physics >= policy, got {control}/{physics}/{policy}",
        )
    if control % policy != 0:
        raise ConfigError(
            f"{path}.policy_rate_hz",
            f"{policy} Hz must divide the control rate {control} Hz "
            "(policy outputs are zero-order held on control ticks)",
        )

    clamp = _positive(
        _finite_scalar(_require(tree, "contact_force_clamp", path), f"{path}.contact_force_clamp"),
        f"{path}.contact_force_clamp",
    )
    threshold = _positive(
        _finite_scalar(_require(tree, "contact_threshold", path), f"{path}.contact_threshold"),
        f"{path}.contact_threshold",
    )
    if not clamp > threshold:
        raise ConfigError(
            f"{path}.contact_force_clamp",
            f"clamp ({clamp}) must exceed threshold ({threshold})",
        )

    tel = _require(tree, "teleop", path)
    deadzone = _finite_scalar(tel.get("deadzone", 0.05), f"{path}.teleop.deadzone")
    if not 0.0 <= deadzone < 1.0:
        raise ConfigError(f"{path}.teleop.deadzone", "must be in [0, 1)")
    expo = _finite_scalar(tel.get("expo", 1.5), f"{path}.teleop.expo")
    if expo <= 0:
        raise ConfigError(f"{path}.teleop.expo", "must be > 0")
    teleop = TeleopLimits(
        max_v=_positive(
            _finite_scalar(_require(tel, "max_v", f"{path}.teleop"), f"{path}.teleop.max_v"),
            f"{path}.teleop.max_v",
        ),
        max_omega=_positive(
            _finite_scalar(_require(tel, "max_omega", f"{path}.teleop"), f"{path}.teleop.max_omega"),
            f"{path}.teleop.max_omega",
        ),
        deadzone=deadzone,
        expo=expo,
        accel_limit=_positive(
            _finite_scalar(tel.get("accel_limit", 1.0), f"{path}.teleop.accel_limit"),
            f"{path}.teleop.accel_limit",
        ),
        omega_accel_limit=_positive(
            _finite_scalar(tel.get("omega_accel_limit", 2.0), f"{path}.teleop.omega_accel_limit"),
            f"{path}.teleop.omega_accel_limit",
        ),
        ee_lin_rate=_positive(
            _finite_scalar(tel.get("ee_lin_rate", 0.1), f"{path}.teleop.ee_lin_rate"),
            f"{path}.teleop.ee_lin_rate",
        ),
        ee_ang_rate=_positive(
            _finite_scalar(tel.get("ee_ang_rate", 0.5), f"{path}.teleop.ee_ang_rate"),
            f"{path}.teleop.ee_ang_rate",
        ),
    )

    rates: dict[str, float] = {}
    for topic, rate in (tree.get("telemetry_rates_hz") or {}).items():
        r = _positive(_finite_scalar(rate, f"{path}.telemetry_rates_hz.{topic}"), f"{path}.telemetry_rates_hz.{topic}")
        if r > control:
            raise ConfigError(
                f"{path}.telemetry_rates_hz.{topic}", f"cannot exceed the control rate {control} Hz"
            )
        rates[str(topic)] = r

    watchdog = int(_finite_scalar(tree.get("watchdog_ticks", 3), f"{path}.watchdog_ticks"))
    if watchdog < 1:
        raise ConfigError(f"{path}.watchdog_ticks", "must be >= 1")

    seed = int(_finite_scalar(tree.get("seed", 0), f"{path}.seed"))

    return StackConfig(
        control_rate_hz=control,
        physics_rate_hz=physics,
        policy_rate_hz=policy,
        contact_force_clamp=clamp,
        contact_threshold=threshold,
        teleop=teleop,
        gait_frequency_hz=_positive(
            _finite_scalar(tree.get("gait_frequency_hz", 2.0), f"{path}.gait_frequency_hz"),
            f"{path}.gait_frequency_hz",
        ),
        action_scale=_positive(
            _finite_scalar(tree.get("action_scale", 0.5), f"{path}.action_scale"),
            f"{path}.action_scale",
        ),
        ee_slew_linear=_positive(
            _finite_scalar(tree.get("ee_slew_linear", 0.2), f"{path}.ee_slew_linear"),
            f"{path}.ee_slew_linear",
        ),
        ee_slew_angular=_positive(
            _finite_scalar(tree.get("ee_slew_angular", 1.0), f"{path}.ee_slew_angular"),
            f"{path}.ee_slew_angular",
        ),
        watchdog_ticks=watchdog,
        telemetry_rates_hz=rates,
        telemetry_default_rate_hz=_positive(
            _finite_scalar(tree.get("telemetry_default_rate_hz", 20.0), f"{path}.telemetry_default_rate_hz"),
            f"{path}.telemetry_default_rate_hz",
        ),
        seed=seed,
    )


def parse_config(tree: dict) -> tuple[RobotModel, StackConfig]:
    """Validate an already-parsed YAML tree. Pure; raises ConfigError on any violation."""
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "config root must be a mapping")
    version = tree.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    robot = _parse_robot(_require(tree, "robot", "<root>"))
    stack = _parse_stack(_require(tree, "stack", "<root>"))
    return robot, stack


def load_config(path: str | Path) -> tuple[RobotModel, StackConfig]:
    """Load and validate a config file. Deterministic, side-effect free."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(str(p), "file does not exist")
    try:
        tree = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(p), f"YAML parse error: {exc}") from exc
    return parse_config(tree)


def default_config_path() -> Path:
    return Path(str(resources.files("quadstack").joinpath("assets/default_config.yaml")))


def load_default_config() -> tuple[RobotModel, StackConfig]:
    return load_config(default_config_path())
