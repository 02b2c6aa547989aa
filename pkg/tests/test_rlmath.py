import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadstack.hal import RobotSnapshot, SimTruth
from quadstack.model import load_default_config
from quadstack.rlmath import (
    CommandRanges,
    DRParams,
    DRRanges,
    GaeConfig,
    PpoBatch,
    RewardConfig,
    gae,
    ppo_clip_loss,
    ppo_clip_surrogate,
    reward_total,
    reward_tracking,
    sample_command,
    sample_dr,
    trot_stance_pattern,
)

MODEL, _ = load_default_config()


def gae_bruteforce(rewards, values, gamma, lam):
    """Independent double-sum: A_t = sum_k (gamma*lam)^k * delta_{t+k}."""
    n = len(rewards)
    deltas = [rewards[t] + gamma * values[t + 1] - values[t] for t in range(n)]
    out = []
    for t in range(n):
        acc = 0.0
        for k in range(n - t):
            acc += (gamma * lam) ** k * deltas[t + k]
        out.append(acc)
    return np.array(out)


# --- GAE -----------------------------------------------------------------------

def test_gae_single_step_definition():
    adv = gae([1.5], [0.3, 0.7], GaeConfig(gamma=0.9, lam=0.95))
    assert adv[0] == pytest.approx(1.5 + 0.9 * 0.7 - 0.3)


def test_gae_lambda_zero_td_errors_exactly():
    rng = np.random.default_rng(0)
    r = rng.standard_normal(20)
    v = rng.standard_normal(21)
    adv = gae(r, v, GaeConfig(gamma=0.97, lam=0.0))
    np.testing.assert_array_equal(adv, r + 0.97 * v[1:] - v[:-1])


def test_gae_matches_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 30))
        r = rng.standard_normal(n)
        v = rng.standard_normal(n + 1)
        adv = gae(r, v, GaeConfig(gamma=0.99, lam=0.95))
        np.testing.assert_allclose(adv, gae_bruteforce(r, v, 0.99, 0.95), atol=1e-10)


def test_gae_discounted_return_identity():
    # lam=1, V=0: A_t is the discounted reward-to-go
    rng = np.random.default_rng(2)
    r = rng.standard_normal(15)
    adv = gae(r, np.zeros(16), GaeConfig(gamma=0.9, lam=1.0))
    expected = [sum(0.9**k * r[t + k] for k in range(15 - t)) for t in range(15)]
    np.testing.assert_allclose(adv, expected, atol=1e-10)


def test_gae_length_mismatch():
    with pytest.raises(ValueError):
        gae([1.0, 2.0], [0.0, 0.0], GaeConfig())


# --- PPO clip --------------------------------------------------------------------

def test_ppo_ratio_one_gives_advantage():
    batch = PpoBatch(ratios=np.array([1.0]), advantages=np.array([2.5]), epsilon=0.2)
    assert ppo_clip_surrogate(batch)[0] == pytest.approx(2.5)
    assert ppo_clip_loss(batch) == pytest.approx(-2.5)


def test_ppo_clipped_above():
    batch = PpoBatch(ratios=np.array([2.0]), advantages=np.array([1.0]), epsilon=0.2)
    assert ppo_clip_surrogate(batch)[0] == pytest.approx(1.2)


def test_ppo_negative_advantage_branch():
    batch = PpoBatch(ratios=np.array([0.5]), advantages=np.array([-1.0]), epsilon=0.2)
    assert ppo_clip_surrogate(batch)[0] == pytest.approx(-0.8)


def test_ppo_finite_difference_gradient_away_from_kinks():
    rng = np.random.default_rng(3)
    eps = 0.2
    for _ in range(200):
        rho = float(rng.uniform(0.3, 2.0))
        adv = float(rng.standard_normal())
        # avoid the min/clip kinks where the derivative jumps
        if min(abs(rho - (1 - eps)), abs(rho - (1 + eps))) < 1e-3 or abs(adv) < 1e-6:
            continue
        h = 1e-7
        f = lambda r: -min(r * adv, min(max(r, 1 - eps), 1 + eps) * adv)
        fd = (f(rho + h) - f(rho - h)) / (2 * h)
        if adv > 0:
            analytic = -adv if rho < 1 + eps else 0.0
        else:
            analytic = -adv if rho > 1 - eps else 0.0
        assert fd == pytest.approx(analytic, abs=1e-6)


def test_ppo_gradient_zero_in_clip_region():
    # rho beyond 1+eps with positive advantage: loss is flat
    eps = 0.2
    adv = 1.7
    f = lambda r: -min(r * adv, min(max(r, 1 - eps), 1 + eps) * adv)
    assert f(1.5) == f(1.5 + 1e-4) == f(1.5 - 1e-4)


def test_ppo_batch_validation():
    with pytest.raises(ValueError):
        PpoBatch(ratios=np.array([-0.1]), advantages=np.array([1.0]), epsilon=0.2)
    with pytest.raises(ValueError):
        PpoBatch(ratios=np.array([1.0]), advantages=np.array([1.0]), epsilon=1.5)


# --- reward kernels --------------------------------------------------------------

def test_tracking_perfect_is_one():
    assert reward_tracking([0.3, 0.1], [0.3, 0.1], 0.25) == pytest.approx(1.0)


def test_tracking_at_sigma_is_inv_e():
    assert reward_tracking([math.sqrt(0.25)], [0.0], 0.25) == pytest.approx(1 / math.e)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.01, 2.0))
@settings(max_examples=100, deadline=None)
def test_tracking_monotone_in_error(a, b, extra):
    base = reward_tracking([a], [b], 0.25)
    worse = reward_tracking([a + math.copysign(extra, a - b) if a != b else a + extra], [b], 0.25)
    assert worse <= base + 1e-12


def make_snapshot(v_body=(0, 0, 0), wz=0.0, tau=None, dq=None, quat=(1, 0, 0, 0)):
    truth = SimTruth(
        base_pos=np.zeros(3),
        base_quat=np.asarray(quat, dtype=float),
        base_vel_world=np.asarray(v_body, dtype=float),
        base_vel_body=np.asarray(v_body, dtype=float),
        omega_body=np.array([0.0, 0.0, wz]),
        foot_forces_world=np.zeros((4, 3)),
        foot_contacts=(True, True, True, True),
        foot_positions_world=np.zeros((4, 3)),
    )
    return RobotSnapshot(
        t=0.0,
        q=np.zeros(19),
        dq=np.zeros(19) if dq is None else dq,
        tau=np.zeros(19) if tau is None else tau,
        quat=np.asarray(quat, dtype=float),
        gyro=np.array([0.0, 0.0, wz]),
        acc=np.zeros(3),
        truth=truth,
    )


def test_reward_total_optimum():
    from quadstack.teleop import CommandInput

    cfg = RewardConfig()
    cmd = CommandInput(v_x=0.3)
    snap = make_snapshot(v_body=(0.3, 0, 0))
    total, breakdown = reward_total(snap, np.zeros(12), cmd, trot_stance_pattern(0.5), 0.5, cfg)
    assert breakdown["tracking_v"] == pytest.approx(cfg.w_tracking_v)
    assert breakdown["tracking_w"] == pytest.approx(cfg.w_tracking_w)
    assert breakdown["energy"] == 0.0
    assert breakdown["alive"] == cfg.w_alive
    assert breakdown["gait"] == 0.0
    assert total == pytest.approx(cfg.w_tracking_v + cfg.w_tracking_w + cfg.w_alive)


def test_reward_fallen_zeroes_alive():
    from quadstack.teleop import CommandInput

    # rolled onto the side: body z tilted 90 degrees
    snap = make_snapshot(quat=(math.sqrt(0.5), math.sqrt(0.5), 0, 0))
    _, breakdown = reward_total(snap, np.zeros(12), CommandInput(), (True,) * 4, 0.5, RewardConfig())
    assert breakdown["alive"] == 0.0


def test_reward_energy_weight_linearity():
    from quadstack.teleop import CommandInput

    tau = np.linspace(-10, 10, 19)
    dq = np.linspace(1, -1, 19)
    snap = make_snapshot(tau=tau, dq=dq)
    _, b1 = reward_total(snap, np.zeros(12), CommandInput(), trot_stance_pattern(0.5), 0.5, RewardConfig(w_energy=0.002))
    _, b2 = reward_total(snap, np.zeros(12), CommandInput(), trot_stance_pattern(0.5), 0.5, RewardConfig(w_energy=0.004))
    assert b2["energy"] == pytest.approx(2 * b1["energy"])


def test_trot_pattern_diagonal_pairs():
    fl, fr, rl, rr = trot_stance_pattern(0.1)
    assert (fl, rr) == (True, True) and (fr, rl) == (False, False)
    fl, fr, rl, rr = trot_stance_pattern(math.pi + 0.1)
    assert (fl, rr) == (False, False) and (fr, rl) == (True, True)


# --- samplers -----------------------------------------------------------------

def test_command_level_zero_neutral():
    rng = np.random.default_rng(5)
    ranges = CommandRanges.for_model(MODEL)
    cmd = sample_command(rng, ranges, 0.0)
    assert cmd.v_x == 0.0 and cmd.v_y == 0.0 and cmd.omega == 0.0
    np.testing.assert_allclose(cmd.ee_position, 0.5 * (ranges.ee_lower + ranges.ee_upper))


def test_command_level_one_spans_range():
    rng = np.random.default_rng(6)
    ranges = CommandRanges.for_model(MODEL)
    draws = np.array([sample_command(rng, ranges, 1.0).v_x for _ in range(10_000)])
    lo, hi = ranges.v_x
    assert draws.min() < lo + 0.05 * (hi - lo)
    assert draws.max() > hi - 0.05 * (hi - lo)
    # KS-style check against uniform on (lo, hi)
    sorted_u = np.sort((draws - lo) / (hi - lo))
    grid = (np.arange(1, len(sorted_u) + 1)) / len(sorted_u)
    ks = np.abs(sorted_u - grid).max()
    assert ks < 0.02  # far above the 1% critical value ~0.0163 for n=1e4


def test_command_ee_always_in_workspace():
    rng = np.random.default_rng(7)
    ranges = CommandRanges.for_model(MODEL)
    for level in (0.2, 0.7, 1.0):
        for _ in range(200):
            cmd = sample_command(rng, ranges, level)
            assert np.all(cmd.ee_position >= MODEL.workspace_lower - 1e-12)
            assert np.all(cmd.ee_position <= MODEL.workspace_upper + 1e-12)


def test_command_seeded_determinism():
    ranges = CommandRanges.for_model(MODEL)
    a = [sample_command(np.random.default_rng(42), ranges, 0.8) for _ in range(1)][0]
    b = [sample_command(np.random.default_rng(42), ranges, 0.8) for _ in range(1)][0]
    assert a.v_x == b.v_x and a.omega == b.omega
    np.testing.assert_array_equal(a.ee_position, b.ee_position)


def test_dr_level_zero_nominal():
    rng = np.random.default_rng(8)
    dr = sample_dr(rng, DRRanges(), 0.0)
    nominal = DRParams.nominal()
    assert dr.friction == nominal.friction
    assert dr.base_mass_delta == 0.0
    assert dr.latency_ticks == 0
    np.testing.assert_array_equal(dr.com_delta, np.zeros(3))


def test_dr_determinism_and_positivity():
    d1 = sample_dr(np.random.default_rng(9), DRRanges(), 1.0)
    d2 = sample_dr(np.random.default_rng(9), DRRanges(), 1.0)
    assert d1.friction == d2.friction and d1.latency_ticks == d2.latency_ticks
    rng = np.random.default_rng(10)
    for level in np.linspace(0, 1, 20):
        assert sample_dr(rng, DRRanges(), float(level)).friction > 0


def test_level_out_of_range_rejected():
    rng = np.random.default_rng(11)
    with pytest.raises(ValueError):
        sample_command(rng, CommandRanges(), 1.5)
    with pytest.raises(ValueError):
        sample_dr(rng, DRRanges(), -0.1)
