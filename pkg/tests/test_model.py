import copy

import numpy as np
import pytest
import yaml

from quadstack.model import (
    ConfigError,
    default_config_path,
    load_config,
    parse_config,
)


@pytest.fixture(scope="module")
def default_tree():
    return yaml.safe_load(default_config_path().read_text())


def test_default_config_rates(default_tree):
    _, stack = parse_config(default_tree)
    assert stack.control_rate_hz == 500
    assert stack.physics_rate_hz == 200
    assert stack.policy_rate_hz == 50


def test_default_contact_constants(default_tree):
    _, stack = parse_config(default_tree)
    assert stack.contact_threshold == 80.0
    assert stack.contact_force_clamp == 1000.0


def test_physics_rate_without_exact_period_rejected(default_tree):
    tree = copy.deepcopy(default_tree)
    tree["stack"]["physics_rate_hz"] = 300
    with pytest.raises(ConfigError, match="physics_rate_hz"):
        parse_config(tree)


def test_policy_rate_must_divide_control(default_tree):
    tree = copy.deepcopy(default_tree)
    tree["stack"]["policy_rate_hz"] = 40  # 500 % 40 != 0
    with pytest.raises(ConfigError, match="policy_rate_hz"):
        parse_config(tree)


def test_rate_ordering_enforced(default_tree):
    tree = copy.deepcopy(default_tree)
    tree["stack"]["physics_rate_hz"] = 1000
    with pytest.raises(ConfigError):
        parse_config(tree)


def test_clamp_must_exceed_threshold(default_tree):
    tree = copy.deepcopy(default_tree)
    tree["stack"]["contact_force_clamp"] = 50.0
    with pytest.raises(ConfigError, match="clamp"):
        parse_config(tree)


def test_nan_rejected_anywhere(default_tree):
    tree = copy.deepcopy(default_tree)
    tree["robot"]["mass"]["base_mass"] = float("nan")
    with pytest.raises(ConfigError, match="base_mass"):
        parse_config(tree)
    tree = copy.deepcopy(default_tree)
    tree["robot"]["default_pose"][3] = float("inf")
    with pytest.raises(ConfigError):
        parse_config(tree)


def test_default_pose_outside_limits_rejected(default_tree):
    tree = copy.deepcopy(default_tree)
    tree["robot"]["default_pose"][0] = 5.0
    with pytest.raises(ConfigError, match="default_pose"):
        parse_config(tree)


def test_limit_interval_width(default_tree):
    tree = copy.deepcopy(default_tree)
    tree["robot"]["joint_limits"]["q_upper"][2] = tree["robot"]["joint_limits"]["q_lower"][2]
    with pytest.raises(ConfigError, match="positive width"):
        parse_config(tree)


def test_load_is_deterministic(tmp_path, default_tree):
    p = tmp_path / "cfg.yaml"
    p.write_text(default_config_path().read_text())
    m1, s1 = load_config(p)
    m2, s2 = load_config(p)
    assert s1 == s2
    assert np.array_equal(m1.default_pose, m2.default_pose)
    assert np.array_equal(m1.joint_limits.tau_max, m2.joint_limits.tau_max)


def test_missing_file():
    with pytest.raises(ConfigError, match="does not exist"):
        load_config("/nonexistent/cfg.yaml")


def test_malformed_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("robot: [unbalanced")
    with pytest.raises(ConfigError, match="parse error"):
        load_config(p)


def test_schema_version_checked(default_tree):
    tree = copy.deepcopy(default_tree)
    tree["schema_version"] = 99
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config(tree)


def test_model_arrays_read_only(default_tree):
    model, _ = parse_config(default_tree)
    with pytest.raises(ValueError):
        model.default_pose[0] = 1.0
    with pytest.raises(ValueError):
        model.leg_params[0].hip_offset[0] = 9.9
