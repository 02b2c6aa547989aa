import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadstack.estimation import (
    ContactEstimator,
    ContactForce,
    StaleSnapshotError,
    contact_flag,
    estimate_leg_force,
)
from quadstack.hal import RobotSnapshot
from quadstack.model import load_default_config

MODEL, CONFIG = load_default_config()


def make_snapshot(t, q=None, tau=None):
    return RobotSnapshot(
        t=t,
        q=MODEL.default_pose.copy() if q is None else q,
        dq=np.zeros(19),
        tau=np.zeros(19) if tau is None else tau,
        quat=np.array([1.0, 0.0, 0.0, 0.0]),
        gyro=np.zeros(3),
        acc=np.array([0.0, 0.0, 9.81]),
    )


def test_zero_torque_zero_force():
    f = estimate_leg_force(np.eye(3), np.zeros(3), clamp=1000.0)
    assert np.all(f.force == 0)


def test_identity_jacobian_passthrough():
    f = estimate_leg_force(np.eye(3), np.array([0.0, 0.0, -90.0]), clamp=1000.0)
    assert f.f_z == pytest.approx(-90.0)


def test_clamp_at_limit():
    # near-singular mapping blows the raw estimate past the clamp
    jac = np.diag([1.0, 1.0, 0.05])
    f = estimate_leg_force(jac, np.array([0.0, 0.0, 75.0]), clamp=1000.0)
    assert f.f_z == pytest.approx(1000.0)


def test_flag_boundary_exact():
    assert contact_flag(ContactForce(force=np.array([0, 0, 80.0])), 80.0) is False
    assert contact_flag(ContactForce(force=np.array([0, 0, 80.1])), 80.0) is True
    assert contact_flag(ContactForce(force=np.array([0, 0, -90.0])), 80.0) is True
    assert contact_flag(ContactForce(force=np.array([0, 0, 79.9])), 80.0) is False


def test_rejects_nonfinite():
    with pytest.raises(ValueError):
        estimate_leg_force(np.eye(3), np.array([np.nan, 0, 0]), clamp=1000.0)


@given(st.floats(0.1, 4.0), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_homogeneity_below_clamp(scale, seed):
    rng = np.random.default_rng(seed)
    jac = rng.standard_normal((3, 3))
    tau = rng.standard_normal(3)
    f1 = estimate_leg_force(jac, tau, clamp=1e12).force
    f2 = estimate_leg_force(jac, scale * tau, clamp=1e12).force
    np.testing.assert_allclose(f2, scale * f1, rtol=1e-9, atol=1e-9)


def test_clamp_idempotent_componentwise():
    rng = np.random.default_rng(1)
    for _ in range(50):
        raw = rng.uniform(-3000, 3000, 3)
        once = np.clip(raw, -1000, 1000)
        np.testing.assert_array_equal(np.clip(once, -1000, 1000), once)
        # order independence: per-component clamp commutes with permutation
        perm = rng.permutation(3)
        np.testing.assert_array_equal(np.clip(raw[perm], -1000, 1000), once[perm])


def test_estimator_zero_torque_no_contacts():
    est = ContactEstimator(MODEL, CONFIG)
    state = est.update(make_snapshot(0.01))
    assert state.flags == (False, False, False, False)


def test_estimator_rejects_timestamp_regression():
    est = ContactEstimator(MODEL, CONFIG)
    est.update(make_snapshot(0.02))
    with pytest.raises(StaleSnapshotError):
        est.update(make_snapshot(0.01))
    with pytest.raises(StaleSnapshotError):
        est.update(make_snapshot(0.02))


def test_estimator_standing_torques_flag_all_legs():
    # torques consistent with each leg carrying a quarter of the weight
    from quadstack.kinematics import leg_jacobian

    tau = np.zeros(19)
    per_leg = MODEL.total_mass * 9.81 / 4
    for i in range(4):
        sl = MODEL.leg_slice(i)
        jac = leg_jacobian(MODEL.leg_params[i], MODEL.default_pose[sl])
        tau[sl] = -jac.T @ np.array([0.0, 0.0, per_leg])
    est = ContactEstimator(MODEL, CONFIG)
    state = est.update(make_snapshot(0.01, tau=tau))
    assert state.flags == (True, True, True, True)
    for fc in state.forces:
        assert abs(fc.f_z) == pytest.approx(per_leg, rel=1e-6)
