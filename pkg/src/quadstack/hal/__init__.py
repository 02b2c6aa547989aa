"""Hardware abstraction boundary.

One backend contract, two implementations: a reduced-order physics simulator
(`sim.SimBackend`) and a UDP robot bridge (`udp.UdpBackend`). The control
stack sees only this interface; swapping backends must require no stack
changes.

Backend contract:
  read_state() -> RobotSnapshot   latest snapshot, never blocks
  write_command(cmd)              latches the command for the next physics
                                  step / UDP send
  step(dt)                        sim only: advance physics by exactly dt
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from ..model import N_JOINTS


@dataclass(frozen=True)
class SimTruth:
    """Ground-truth extras only the simulator can provide."""

    base_pos: np.ndarray  # (3,) m, world
    base_quat: np.ndarray  # (4,) wxyz
    base_vel_world: np.ndarray  # (3,) m/s
    base_vel_body: np.ndarray  # (3,) m/s
    omega_body: np.ndarray  # (3,) rad/s
    foot_forces_world: np.ndarray  # (4, 3) N, force on each foot from the ground
    foot_contacts: tuple[bool, bool, bool, bool]
    foot_positions_world: np.ndarray  # (4, 3) m


@dataclass(frozen=True)
class RobotSnapshot:
    """Time-stamped full sensor state crossing the HAL boundary."""

    t: float  # s
    q: np.ndarray  # (19,) rad
    dq: np.ndarray  # (19,) rad/s
    tau: np.ndarray  # (19,) N*m, measured actuator torques
    quat: np.ndarray  # (4,) wxyz IMU orientation, unit norm
    gyro: np.ndarray  # (3,) rad/s body frame
    acc: np.ndarray  # (3,) m/s^2 body frame
    truth: Optional[SimTruth] = None  # absent on the real-robot backend

    def __post_init__(self):
        if self.q.shape != (N_JOINTS,) or self.dq.shape != (N_JOINTS,) or self.tau.shape != (N_JOINTS,):
            raise ValueError(f"joint arrays must have shape ({N_JOINTS},)")
        n = float(np.linalg.norm(self.quat))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"IMU quaternion must be unit norm, got {n}")

    @property
    def base_vel_body(self) -> np.ndarray:
        if self.truth is None:
            raise ValueError("body velocity ground truth is sim-only")
        return self.truth.base_vel_body


@runtime_checkable
class Backend(Protocol):
    def read_state(self) -> RobotSnapshot: ...

    def write_command(self, cmd) -> None: ...


class LatestSlot:
    """Single-producer single-consumer latest-value exchange.

    The producer overwrites, the consumer reads the freshest value and never
    blocks. A mutex guards the reference swap; there is no queueing.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._value = None

    def put(self, value) -> None:
        with self._lock:
            self._value = value

    def get(self):
        with self._lock:
            return self._value


from .sim import ContactMode, ContactModelConfig, FakeArm, SimBackend  # noqa: E402
from .udp import EchoRobot, UdpBackend  # noqa: E402
from . import wire  # noqa: E402

__all__ = [
    "Backend",
    "ContactMode",
    "ContactModelConfig",
    "EchoRobot",
    "FakeArm",
    "LatestSlot",
    "RobotSnapshot",
    "SimBackend",
    "SimTruth",
    "UdpBackend",
    "wire",
]
