"""Training-side math, desk scale: PPO clipped surrogate, GAE, reward
kernels, command / domain-randomization samplers with curriculum scaling.

No training loop lives here — these are tested numerical kernels, exposed
for unit verification and for the bench module's reward-trace reporting.
Reward weights and kernel widths are structural placeholders chosen so each
term is O(1) at nominal operation; the published system does not disclose
its values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import gravity_in_body
from .model import RobotModel
from .teleop import CommandInput


@dataclass(frozen=True)
class GaeConfig:
    gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in [0, 1]")


@dataclass(frozen=True)
class PpoBatch:
    ratios: np.ndarray  # per-sample probability ratios, > 0
    advantages: np.ndarray
    epsilon: float  # clip range in (0, 1)

    def __post_init__(self):
        r = np.asarray(self.ratios, dtype=float)
        a = np.asarray(self.advantages, dtype=float)
        if r.shape != a.shape:
            raise ValueError("ratios and advantages must have matching shapes")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(a))):
            raise ValueError("batch contains non-finite values")
        if np.any(r <= 0):
            raise ValueError("probability ratios must be > 0")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        object.__setattr__(self, "ratios", r)
        object.__setattr__(self, "advantages", a)


@dataclass(frozen=True)
class RewardConfig:
    sigma_v: float = 0.25  # (m/s)^2 kernel width for linear tracking
    sigma_w: float = 0.25  # (rad/s)^2 kernel width for yaw tracking
    w_tracking_v: float = 1.0
    w_tracking_w: float = 0.5
    w_energy: float = 0.002
    w_alive: float = 0.5
    w_gait: float = 0.3

    def __post_init__(self):
        if self.sigma_v <= 0 or self.sigma_w <= 0:
            raise ValueError("kernel widths must be > 0")


def gae(rewards, values, cfg: GaeConfig) -> np.ndarray:
    """Generalized advantage estimation by backward recursion:
    A_t = delta_t + gamma*lam*A_{t+1}, delta_t = r_t + gamma*V_{t+1} - V_t."""
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.shape != (r.shape[0] + 1,):
        raise ValueError(f"values must have length len(rewards)+1, got {v.shape}")
    deltas = r + cfg.gamma * v[1:] - v[:-1]
    adv = np.zeros_like(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + cfg.gamma * cfg.lam * acc
        adv[t] = acc
    return adv


def ppo_clip_surrogate(batch: PpoBatch) -> np.ndarray:
    """Per-sample clipped surrogate min(rho*A, clip(rho, 1-eps, 1+eps)*A)."""
    clipped = np.clip(batch.ratios, 1.0 - batch.epsilon, 1.0 + batch.epsilon)
    return np.minimum(batch.ratios * batch.advantages, clipped * batch.advantages)


def ppo_clip_loss(batch: PpoBatch) -> float:
    """Mean negated clipped surrogate: a loss to minimize."""
    return float(-np.mean(ppo_clip_surrogate(batch)))


def reward_tracking(v_meas, v_cmd, sigma: float) -> float:
    """Exponential tracking kernel exp(-||v_meas - v_cmd||^2 / sigma), in (0, 1]."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    err = np.asarray(v_meas, dtype=float) - np.asarray(v_cmd, dtype=float)
    return float(math.exp(-float(np.dot(err, err)) / sigma))


def trot_stance_pattern(phase: float) -> tuple[bool, bool, bool, bool]:
    """Diagonal-pair trot schedule over the global gait phase: (FL, RR) in
    stance for the first half cycle, (FR, RL) for the second."""
    first = math.fmod(phase, 2.0 * math.pi) < math.pi
    return (first, not first, not first, first)


def is_fallen(quat_wxyz: np.ndarray) -> bool:
    """Fallen when the body z-axis tilts more than ~60 degrees from vertical."""
    return bool(gravity_in_body(quat_wxyz)[2] > -0.5)


def reward_total(
    snapshot,
    action: np.ndarray,
    cmd: CommandInput,
    contact_flags,
    phase: float,
    cfg: RewardConfig,
) -> tuple[float, dict[str, float]]:
    """Weighted tick reward with a per-term breakdown (terms stored weighted).

    Needs body-frame base velocity, so it runs where ground truth or an
    estimate is available (the sim backend provides it).
    """
    v_meas = snapshot.base_vel_body[:2]
    w_meas = float(snapshot.gyro[2])
    breakdown = {
        "tracking_v": cfg.w_tracking_v
        * reward_tracking(v_meas, np.array([cmd.v_x, cmd.v_y]), cfg.sigma_v),
        "tracking_w": cfg.w_tracking_w * reward_tracking([w_meas], [cmd.omega], cfg.sigma_w),
        "energy": -cfg.w_energy * float(np.sum(np.abs(snapshot.tau * snapshot.dq))),
        "alive": cfg.w_alive * (0.0 if is_fallen(snapshot.quat) else 1.0),
    }
    schedule = trot_stance_pattern(phase)
    mismatch = sum(1.0 for got, want in zip(contact_flags, schedule) if got != want) / 4.0
    breakdown["gait"] = -cfg.w_gait * mismatch
    return float(sum(breakdown.values())), breakdown


# -- samplers -----------------------------------------------------------------


@dataclass(frozen=True)
class CommandRanges:
    """Full-curriculum sampling ranges; level scales every interval about its
    midpoint, so level 0 collapses to the neutral command."""

    v_x: tuple[float, float] = (-0.8, 0.8)
    v_y: tuple[float, float] = (-0.4, 0.4)
    omega: tuple[float, float] = (-1.0, 1.0)
    ee_lower: np.ndarray = field(default_factory=lambda: np.array([0.35, -0.25, 0.15]))
    ee_upper: np.ndarray = field(default_factory=lambda: np.array([0.75, 0.25, 0.60]))
    ee_rpy_lower: np.ndarray = field(default_factory=lambda: np.array([-0.5, -0.8, -0.8]))
    ee_rpy_upper: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.8, 0.8]))

    @staticmethod
    def for_model(model: RobotModel) -> "CommandRanges":
        return CommandRanges(ee_lower=model.workspace_lower.copy(), ee_upper=model.workspace_upper.copy())


def _scaled_uniform(rng: np.random.Generator, lo, hi, level: float):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * level
    return rng.uniform(mid - half, mid + half)


def sample_command(rng: np.random.Generator, ranges: CommandRanges, level: float) -> CommandInput:
    """Uniform command in level-scaled ranges; the EE goal stays inside the
    configured box for every level."""
    if not 0.0 <= level <= 1.0:
        raise ValueError("curriculum level must lie in [0, 1]")
    v = _scaled_uniform(rng, [ranges.v_x[0], ranges.v_y[0], ranges.omega[0]],
                        [ranges.v_x[1], ranges.v_y[1], ranges.omega[1]], level)
    return CommandInput(
        v_x=float(v[0]),
        v_y=float(v[1]),
        omega=float(v[2]),
        ee_position=_scaled_uniform(rng, ranges.ee_lower, ranges.ee_upper, level),
        ee_rpy=_scaled_uniform(rng, ranges.ee_rpy_lower, ranges.ee_rpy_upper, level),
    )


@dataclass(frozen=True)
class DRRanges:
    friction_nominal: float = 0.8
    friction_half: float = 0.4  # < nominal, so friction stays positive
    mass_delta_half: float = 5.0  # kg
    com_delta_half: float = 0.03  # m per axis
    damping_scale_half: float = 0.5
    latency_max_ticks: int = 4
    noise_q_std_max: float = 0.01  # rad
    noise_dq_std_max: float = 0.2  # rad/s
    noise_gyro_std_max: float = 0.05  # rad/s
    noise_acc_std_max: float = 0.3  # m/s^2


@dataclass(frozen=True)
class DRParams:
    friction: float
    base_mass_delta: float  # kg
    com_delta: np.ndarray  # (3,) m
    joint_damping_scale: float
    latency_ticks: int
    noise_q_std: float
    noise_dq_std: float
    noise_gyro_std: float
    noise_acc_std: float
    curriculum_level: float

    @staticmethod
    def nominal() -> "DRParams":
        return DRParams(
            friction=DRRanges().friction_nominal,
            base_mass_delta=0.0,
            com_delta=np.zeros(3),
            joint_damping_scale=1.0,
            latency_ticks=0,
            noise_q_std=0.0,
            noise_dq_std=0.0,
            noise_gyro_std=0.0,
            noise_acc_std=0.0,
            curriculum_level=0.0,
        )


def sample_dr(rng: np.random.Generator, ranges: DRRanges, level: float) -> DRParams:
    """Domain-randomization draw; every delta scales linearly with level, so
    level 0 returns the nominal parameters exactly."""
    if not 0.0 <= level <= 1.0:
        raise ValueError("curriculum level must lie in [0, 1]")
    friction = ranges.friction_nominal + level * rng.uniform(-ranges.friction_half, ranges.friction_half)
    return DRParams(
        friction=max(friction, 1e-3),
        base_mass_delta=level * rng.uniform(-ranges.mass_delta_half, ranges.mass_delta_half),
        com_delta=level * rng.uniform(-ranges.com_delta_half, ranges.com_delta_half, 3),
        joint_damping_scale=1.0 + level * rng.uniform(-ranges.damping_scale_half, ranges.damping_scale_half),
        latency_ticks=int(rng.integers(0, max(1, round(ranges.latency_max_ticks * level)) + 1)) if level > 0 else 0,
        noise_q_std=level * rng.uniform(0, ranges.noise_q_std_max),
        noise_dq_std=level * rng.uniform(0, ranges.noise_dq_std_max),
        noise_gyro_std=level * rng.uniform(0, ranges.noise_gyro_std_max),
        noise_acc_std=level * rng.uniform(0, ranges.noise_acc_std_max),
        curriculum_level=level,
    )
