import math

import numpy as np
import pytest

from quadstack.hal import RobotSnapshot
from quadstack.model import load_default_config
from quadstack.policy import (
    ACTION_DIM,
    ADAPT_HISTORY,
    OBS_DIM,
    OBS_PHASE,
    PROPRIO_DIM,
    AdaptationModule,
    ConstantLatent,
    Layer,
    PolicyWeights,
    WeightFormatError,
    advance_phase,
    assemble_observation,
    load_weights,
    make_adaptation_weights,
    make_controller_weights,
    map_action,
    mlp_forward,
    save_weights,
    validate_controller_architecture,
)
from quadstack.teleop import CommandInput

MODEL, CONFIG = load_default_config()


def snapshot(t=0.0, **kw):
    base = dict(
        q=np.zeros(19),
        dq=np.zeros(19),
        tau=np.zeros(19),
        quat=np.array([1.0, 0.0, 0.0, 0.0]),
        gyro=np.zeros(3),
        acc=np.array([0.0, 0.0, 9.81]),
    )
    base.update(kw)
    return RobotSnapshot(t=t, **base)


def oracle_forward(weights, x):
    """Straightforward re-evaluation, independent of mlp_forward's vector path."""
    h = [float(v) for v in x]
    for layer in weights.layers:
        out = []
        for row in range(layer.weight.shape[0]):
            acc = float(layer.bias[row])
            for col in range(layer.weight.shape[1]):
                acc += float(layer.weight[row, col]) * h[col]
            if layer.activation == "elu":
                acc = acc if acc > 0 else math.exp(acc) - 1.0
            elif layer.activation == "tanh":
                acc = math.tanh(acc)
            out.append(acc)
        h = out
    return np.array(h)


# --- mlp_forward ---------------------------------------------------------------

def test_zero_net_outputs_zero():
    layer = Layer(weight=np.zeros((4, 3), dtype=np.float32), bias=np.zeros(4, dtype=np.float32), activation="identity")
    w = PolicyWeights(layers=(layer,), input_dim=3, output_dim=4, obs_layout_version=1)
    np.testing.assert_array_equal(mlp_forward(w, np.array([1.0, -2.0, 3.0])), np.zeros(4))


def test_identity_layer_passthrough():
    layer = Layer(weight=np.eye(3, dtype=np.float32), bias=np.zeros(3, dtype=np.float32), activation="identity")
    w = PolicyWeights(layers=(layer,), input_dim=3, output_dim=3, obs_layout_version=1)
    x = np.array([0.5, -0.25, 2.0])
    np.testing.assert_allclose(mlp_forward(w, x), x, atol=1e-7)


def test_forward_matches_oracle():
    rng = np.random.default_rng(3)
    w = make_controller_weights(rng)
    # small nets keep the O(n^2) oracle fast; slice to 2 layers
    small = PolicyWeights(
        layers=w.layers[:1] + (Layer(weight=rng.standard_normal((5, 128)).astype(np.float32), bias=rng.standard_normal(5).astype(np.float32), activation="tanh"),),
        input_dim=OBS_DIM,
        output_dim=5,
        obs_layout_version=1,
    )
    for _ in range(5):
        x = rng.standard_normal(OBS_DIM)
        np.testing.assert_allclose(mlp_forward(small, x), oracle_forward(small, x), atol=1e-12)


def test_tanh_head_bounded():
    rng = np.random.default_rng(4)
    w = make_controller_weights(rng)
    for _ in range(10):
        out = mlp_forward(w, rng.uniform(-5, 5, OBS_DIM))
        assert np.all(np.abs(out) < 1.0)
        assert out.shape == (ACTION_DIM,)


def test_dimension_mismatch_raises():
    rng = np.random.default_rng(5)
    w = make_controller_weights(rng)
    with pytest.raises(ValueError):
        mlp_forward(w, np.zeros(OBS_DIM + 1))


# --- weight file IO ----------------------------------------------------------

def test_save_load_roundtrip_bitexact(tmp_path):
    rng = np.random.default_rng(7)
    w = make_controller_weights(rng)
    p = tmp_path / "policy.bin"
    save_weights(p, w)
    w2 = load_weights(p)
    assert w2.input_dim == OBS_DIM and w2.output_dim == ACTION_DIM
    for a, b in zip(w.layers, w2.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)
        assert a.activation == b.activation
    validate_controller_architecture(w2)


def test_adaptation_bundle_loads_separately(tmp_path):
    rng = np.random.default_rng(8)
    w = make_adaptation_weights(rng)
    p = tmp_path / "adapt.bin"
    save_weights(p, w)
    w2 = load_weights(p)
    assert w2.input_dim == ADAPT_HISTORY * PROPRIO_DIM
    assert w2.output_dim == 8
    with pytest.raises(WeightFormatError):
        validate_controller_architecture(w2)


def test_dimension_chain_mismatch_rejected(tmp_path):
    rng = np.random.default_rng(9)
    w = make_controller_weights(rng)
    p = tmp_path / "bad.bin"
    save_weights(p, w)
    raw = bytearray(p.read_bytes())
    # corrupt the declared hidden width in the JSON header
    idx = raw.find(b'"out": 128')
    raw[idx : idx + 10] = b'"out": 064'
    p.write_bytes(bytes(raw))
    with pytest.raises(WeightFormatError):
        load_weights(p)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(WeightFormatError, match="magic"):
        load_weights(p)


def test_layout_version_guard(tmp_path):
    rng = np.random.default_rng(10)
    w = make_controller_weights(rng)
    p = tmp_path / "v2.bin"
    save_weights(p, w)
    raw = p.read_bytes().replace(b'"obs_layout_version": 1', b'"obs_layout_version": 2')
    p.write_bytes(raw)
    with pytest.raises(WeightFormatError, match="layout"):
        load_weights(p)


# --- observation assembly -------------------------------------------------------

def test_zero_observation_has_cos_slot():
    obs = assemble_observation(snapshot(), CommandInput(), 0.0, np.zeros(8), np.zeros(12))
    assert obs.shape == (OBS_DIM,)
    # gravity slot is the unit down vector; phase cos = 1
    assert obs[5] == pytest.approx(-1.0)
    assert obs[51] == pytest.approx(0.0)
    assert obs[52] == pytest.approx(1.0)
    nz = np.nonzero(obs)[0]
    assert set(nz.tolist()) == {5, 52}


def test_command_slot_index():
    cmd = CommandInput(v_x=0.4)
    obs = assemble_observation(snapshot(), cmd, 0.0, np.zeros(8), np.zeros(12))
    assert obs[6] == pytest.approx(0.4)


def test_layout_slots_independent():
    snapA = snapshot(q=np.arange(19) * 0.01)
    snapB = snapshot(q=np.arange(19) * 0.01)
    a = assemble_observation(snapA, CommandInput(), 0.3, np.zeros(8), np.zeros(12))
    qs = np.arange(19) * 0.01
    qs[0], qs[5] = qs[5], qs[0]  # swap two leg joints
    b = assemble_observation(snapshot(q=qs), CommandInput(), 0.3, np.zeros(8), np.zeros(12))
    changed = np.nonzero(a != b)[0]
    assert set(changed.tolist()) == {15, 20}


def test_nan_rejected():
    bad = snapshot(gyro=np.array([np.nan, 0, 0]))
    with pytest.raises(ValueError, match="non-finite"):
        assemble_observation(bad, CommandInput(), 0.0, np.zeros(8), np.zeros(12))


# --- action mapping -----------------------------------------------------------

def test_zero_action_default_pose():
    out = map_action(np.zeros(12), MODEL, CONFIG.action_scale)
    np.testing.assert_array_equal(out, MODEL.default_pose[:12])


def test_full_action_scale_offset():
    out = map_action(np.ones(12), MODEL, 0.5)
    expected = np.minimum(MODEL.default_pose[:12] + 0.5, MODEL.joint_limits.q_upper[:12])
    np.testing.assert_allclose(out, expected)


def test_action_clamped_at_limit():
    # knee default -1.34, scale 2.0 drives past the lower limit -2.7
    out = map_action(-np.ones(12), MODEL, 2.0)
    assert out[2] == MODEL.joint_limits.q_lower[2]


def test_out_of_range_action_rejected():
    with pytest.raises(ValueError):
        map_action(np.full(12, 1.5), MODEL, 0.5)


# --- phase --------------------------------------------------------------------

def test_phase_quarter_cycle():
    assert advance_phase(0.0, 0.25, 2.0) == pytest.approx(math.pi)


def test_phase_zero_dt():
    assert advance_phase(1.234, 0.0, 2.0) == pytest.approx(1.234)


def test_phase_wraps_full_cycle():
    phi = 0.1
    for _ in range(50):
        phi = advance_phase(phi, 0.01, 2.0)
    assert phi == pytest.approx(0.1, abs=1e-9)


# --- adaptation ---------------------------------------------------------------

def test_zero_adaptation_weights_neutral_latent():
    layers = (
        Layer(
            weight=np.zeros((8, ADAPT_HISTORY * PROPRIO_DIM), dtype=np.float32),
            bias=np.zeros(8, dtype=np.float32),
            activation="identity",
        ),
    )
    w = PolicyWeights(layers=layers, input_dim=ADAPT_HISTORY * PROPRIO_DIM, output_dim=8, obs_layout_version=1)
    mod = AdaptationModule(w)
    z = mod.update(snapshot(), np.zeros(12))
    np.testing.assert_array_equal(z, np.zeros(8))


def test_constant_history_constant_latent():
    rng = np.random.default_rng(11)
    mod = AdaptationModule(make_adaptation_weights(rng))
    snap = snapshot(q=rng.uniform(-0.3, 0.3, 19))
    z1 = mod.update(snap, np.zeros(12))
    z2 = mod.update(snap, np.zeros(12))
    np.testing.assert_allclose(z1, z2, atol=1e-12)


def test_adaptation_matches_oracle_forward():
    rng = np.random.default_rng(12)
    w = make_adaptation_weights(rng)
    mod = AdaptationModule(w)
    from quadstack.policy import proprio_slice

    snaps = [snapshot(t=i, q=rng.uniform(-0.2, 0.2, 19), dq=rng.uniform(-1, 1, 19)) for i in range(3)]
    z = None
    for s in snaps:
        z = mod.update(s, np.zeros(12))
    # ring: first sample padded, then the two later ones appended
    ring = [proprio_slice(snaps[0], np.zeros(12))] * (ADAPT_HISTORY - 2)
    ring += [proprio_slice(snaps[1], np.zeros(12)), proprio_slice(snaps[2], np.zeros(12))]
    np.testing.assert_allclose(z, mlp_forward(w, np.concatenate(ring)), atol=1e-12)


def test_adaptation_rejects_wrong_dims():
    rng = np.random.default_rng(13)
    with pytest.raises(WeightFormatError):
        AdaptationModule(make_controller_weights(rng))


def test_constant_latent_module():
    lat = ConstantLatent()
    np.testing.assert_array_equal(lat.update(snapshot(), np.zeros(12)), np.zeros(8))
    with pytest.raises(ValueError):
        ConstantLatent(np.zeros(5))
