"""Torque-based foot contact estimation.

The robot has no foot sensors; per-leg contact force is recovered from the
measured joint torques through the leg Jacobian, F = pinv(J^T) tau, with a
hard component clamp to reject spikes. A leg counts as in contact when the
vertical force magnitude strictly exceeds the threshold.

pinv is the SVD pseudo-inverse (not a matrix inverse): legs pass through
singular configurations every swing, where an inverse does not exist. No
gravity or inertial torque compensation is applied before the mapping, which
limits accuracy during fast swings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import leg_jacobian, svd_pinv
from .model import N_LEGS, RobotModel, StackConfig


@dataclass(frozen=True)
class ContactForce:
    """Estimated contact force on one foot, trunk frame, after clamping."""

    force: np.ndarray  # (3,) N

    @property
    def f_z(self) -> float:
        return float(self.force[2])


@dataclass(frozen=True)
class ContactState:
    flags: tuple[bool, bool, bool, bool]
    forces: tuple[ContactForce, ContactForce, ContactForce, ContactForce]
    t: float  # s


class StaleSnapshotError(ValueError):
    pass


def estimate_leg_force(jac: np.ndarray, tau: np.ndarray, clamp: float) -> ContactForce:
    """F = pinv(J^T) tau, each component clamped to +-clamp newtons."""
    tau = np.asarray(tau, dtype=float)
    if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(tau))):
        raise ValueError("Jacobian and torques must be finite")
    f = svd_pinv(np.asarray(jac, dtype=float).T) @ tau
    return ContactForce(force=np.clip(f, -clamp, clamp))


def contact_flag(force: ContactForce, threshold: float) -> bool:
    """True iff |F_z| strictly exceeds the threshold (|F_z| = threshold is no contact)."""
    return abs(force.f_z) > threshold


class ContactEstimator:
    """Per-tick contact estimation over a snapshot stream.

    Stateless apart from a last-timestamp check: snapshots must arrive with
    strictly increasing timestamps (single writer, the control thread).
    """

    def __init__(self, model: RobotModel, config: StackConfig):
        self._model = model
        self._clamp = config.contact_force_clamp
        self._threshold = config.contact_threshold
        self._last_t: float | None = None

    def update(self, snapshot) -> ContactState:
        if self._last_t is not None and snapshot.t <= self._last_t:
            raise StaleSnapshotError(
                f"snapshot timestamp {snapshot.t} not after previous {self._last_t}"
            )
        self._last_t = snapshot.t
        forces = []
        flags = []
        for i in range(N_LEGS):
            sl = self._model.leg_slice(i)
            jac = leg_jacobian(self._model.leg_params[i], snapshot.q[sl])
            force = estimate_leg_force(jac, snapshot.tau[sl], self._clamp)
            forces.append(force)
            flags.append(contact_flag(force, self._threshold))
        return ContactState(flags=tuple(flags), forces=tuple(forces), t=snapshot.t)
