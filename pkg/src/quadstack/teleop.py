"""Dual-mode operator input shaping: deadzones, expo curves, rate limits.

Base mode maps the left stick to body velocity commands; arm mode maps the
right stick (plus the left stick's forward axis) to incremental EE pose
deltas in the trunk frame. The inactive channel is held: base velocities ramp
to zero through the rate limiter, the EE goal simply stops moving (it is
persistent and owned by the goal manager).

Axis conventions (remappable in principle; this is the documented default):
  axes[0] left stick x, +1 = right     axes[1] left stick y, +1 = forward/up
  axes[2] right stick x, +1 = right    axes[3] right stick y, +1 = up

Events arrive timestamped from the dashboard or a replay file; shaping runs
in the control thread at the control rate, not at event rate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .model import StackConfig, TeleopLimits


class Mode(enum.Enum):
    BASE = "base"
    ARM = "arm"


@dataclass(frozen=True)
class TeleopInput:
    """One input event: four stick axes in [-1, 1] plus named buttons."""

    axes: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    mode_toggle: bool = False
    gripper: bool = False
    stand: bool = False
    sit: bool = False
    activate: bool = False
    estop: bool = False
    pitch_up: bool = False
    pitch_down: bool = False
    yaw_left: bool = False
    yaw_right: bool = False
    roll_left: bool = False
    roll_right: bool = False
    t: float = 0.0

    def clamped_axes(self) -> np.ndarray:
        return np.clip(np.asarray(self.axes, dtype=float), -1.0, 1.0)


@dataclass
class CommandInput:
    """The policy-facing command: base velocity plus the EE pose goal."""

    v_x: float = 0.0  # m/s
    v_y: float = 0.0  # m/s
    omega: float = 0.0  # rad/s
    ee_position: np.ndarray = field(default_factory=lambda: np.zeros(3))  # m, trunk frame
    ee_rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))  # rad
    mode: Mode = Mode.BASE


def shape_axis(x: float, deadzone: float, expo: float, scale: float) -> float:
    """Deadzone + power curve, continuous at the deadzone edge, odd in x,
    |output| <= scale."""
    x = min(1.0, max(-1.0, float(x)))
    mag = abs(x)
    if mag <= deadzone:
        return 0.0
    shaped = ((mag - deadzone) / (1.0 - deadzone)) ** expo
    return (1.0 if x > 0 else -1.0) * scale * shaped


def rate_limit(prev: float, target: float, max_rate: float, dt: float) -> float:
    """Move prev toward target by at most max_rate * dt."""
    step = max_rate * dt
    return prev + min(step, max(-step, target - prev))


@dataclass
class ArmDelta:
    """Incremental EE pose change for one tick, trunk frame."""

    position: np.ndarray  # (3,) m
    rpy: np.ndarray  # (3,) rad


class TeleopShaper:
    """Holds rate-limiter memories and the mode toggle state.

    Owned by the control thread: events cross threads through the inbound
    queue, shaping happens here at control rate.
    """

    def __init__(self, limits: TeleopLimits):
        self._lim = limits
        self.mode = Mode.BASE
        self._v_x = 0.0
        self._v_y = 0.0
        self._omega = 0.0
        self._prev_toggle = False
        self._last_input = TeleopInput()

    @classmethod
    def from_config(cls, config: StackConfig) -> "TeleopShaper":
        return cls(config.teleop)

    def feed(self, event: TeleopInput) -> None:
        """Latch the newest input event (mode toggles on the button's rising edge)."""
        if event.mode_toggle and not self._prev_toggle:
            self.mode = Mode.ARM if self.mode == Mode.BASE else Mode.BASE
        self._prev_toggle = event.mode_toggle
        self._last_input = event

    def step(self, dt: float) -> tuple[float, float, float, ArmDelta]:
        """One control tick: returns (v_x, v_y, omega) plus the arm-mode EE delta."""
        lim = self._lim
        axes = self._last_input.clamped_axes()
        if self.mode == Mode.BASE:
            tgt_vx = shape_axis(axes[1], lim.deadzone, lim.expo, lim.max_v)
            tgt_vy = -shape_axis(axes[0], lim.deadzone, lim.expo, lim.max_v)
            tgt_om = -shape_axis(axes[2], lim.deadzone, lim.expo, lim.max_omega)
            delta = ArmDelta(position=np.zeros(3), rpy=np.zeros(3))
        else:
            tgt_vx = tgt_vy = tgt_om = 0.0  # base channel ramps to zero
            dpos = np.array(
                [
                    shape_axis(axes[1], lim.deadzone, lim.expo, lim.ee_lin_rate),
                    -shape_axis(axes[0], lim.deadzone, lim.expo, lim.ee_lin_rate),
                    shape_axis(axes[3], lim.deadzone, lim.expo, lim.ee_lin_rate),
                ]
            )
            ev = self._last_input
            drpy = lim.ee_ang_rate * np.array(
                [
                    float(ev.roll_right) - float(ev.roll_left),
                    float(ev.pitch_up) - float(ev.pitch_down),
                    float(ev.yaw_left) - float(ev.yaw_right),
                ]
            )
            delta = ArmDelta(position=dpos * dt, rpy=drpy * dt)
        self._v_x = rate_limit(self._v_x, tgt_vx, lim.accel_limit, dt)
        self._v_y = rate_limit(self._v_y, tgt_vy, lim.accel_limit, dt)
        self._omega = rate_limit(self._omega, tgt_om, lim.omega_accel_limit, dt)
        return self._v_x, self._v_y, self._omega, delta
