"""Deployed controller: observation assembly, MLP inference, action mapping.

Observation layout (version 1), 61 entries total — identical across sim,
real, and recorded paths. Index map:

    [ 0: 3)  base angular velocity, body frame, rad/s
    [ 3: 6)  projected gravity (unit vector in body frame)
    [ 6: 9)  command: v_x, v_y m/s, yaw rate rad/s
    [ 9:12)  EE goal position, trunk frame, m
    [12:15)  EE goal orientation, roll-pitch-yaw, rad
    [15:27)  leg joint positions, rad
    [27:39)  leg joint velocities, rad/s
    [39:51)  previous action (normalized)
    [51:53)  gait phase: sin(phi), cos(phi)
    [53:61)  extrinsics latent z

The controller network is a 3x128 ELU MLP with a tanh head of width 12; its
outputs are normalized leg joint offsets around the default pose. The
adaptation network maps a flattened history of proprioceptive slices
(ADAPT_HISTORY ticks x 42 values) to the 8-dim latent.

Weight files are self-describing: magic, a JSON header (dims, activations,
layout version), then raw little-endian float32 arrays — loadable from any
language, bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import gravity_in_body
from .model import N_LEG_JOINTS, RobotModel

OBS_DIM = 61
ACTION_DIM = 12
LATENT_DIM = 8
OBS_LAYOUT_VERSION = 1
WEIGHT_FORMAT_VERSION = 1
ADAPT_HISTORY = 25  # ticks of proprioceptive history (0.5 s at 50 Hz)
PROPRIO_DIM = 42  # gyro 3 + gravity 3 + leg q 12 + leg dq 12 + prev action 12

_MAGIC = b"MLPB"
_ACTIVATIONS = ("elu", "tanh", "identity")

# observation slot offsets
OBS_GYRO = slice(0, 3)
OBS_GRAVITY = slice(3, 6)
OBS_COMMAND = slice(6, 9)
OBS_EE_POS = slice(9, 12)
OBS_EE_RPY = slice(12, 15)
OBS_LEG_Q = slice(15, 27)
OBS_LEG_DQ = slice(27, 39)
OBS_PREV_ACTION = slice(39, 51)
OBS_PHASE = slice(51, 53)
OBS_LATENT = slice(53, 61)


class WeightFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in) float32
    bias: np.ndarray  # (out,) float32
    activation: str


@dataclass(frozen=True)
class PolicyWeights:
    layers: tuple[Layer, ...]
    input_dim: int
    output_dim: int
    obs_layout_version: int


def _apply(activation: str, x: np.ndarray) -> np.ndarray:
    if activation == "elu":
        return np.where(x > 0, x, np.expm1(x))
    if activation == "tanh":
        return np.tanh(x)
    return x


def mlp_forward(weights: PolicyWeights, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (weights.input_dim,):
        raise ValueError(f"expected input of shape ({weights.input_dim},), got {x.shape}")
    for layer in weights.layers:
        x = _apply(layer.activation, layer.weight @ x + layer.bias)
    return x


def save_weights(path: str | Path, weights: PolicyWeights) -> None:
    header = {
        "format_version": WEIGHT_FORMAT_VERSION,
        "obs_layout_version": weights.obs_layout_version,
        "input_dim": weights.input_dim,
        "output_dim": weights.output_dim,
        "layers": [
            {"in": l.weight.shape[1], "out": l.weight.shape[0], "activation": l.activation}
            for l in weights.layers
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for l in weights.layers:
            f.write(np.ascontiguousarray(l.weight, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(l.bias, dtype="<f4").tobytes())


def load_weights(path: str | Path) -> PolicyWeights:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != _MAGIC:
        raise WeightFormatError(f"{path}: not a weight bundle (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    try:
        header = json.loads(raw[8 : 8 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != WEIGHT_FORMAT_VERSION:
        raise WeightFormatError(
            f"{path}: format version {header.get('format_version')} != {WEIGHT_FORMAT_VERSION}"
        )
    layout = header.get("obs_layout_version")
    if layout != OBS_LAYOUT_VERSION:
        raise WeightFormatError(
            f"{path}: observation layout version {layout} does not match this build's "
            f"{OBS_LAYOUT_VERSION}; refusing to run a policy indexed against another layout"
        )
    offset = 8 + hlen
    layers: list[Layer] = []
    prev_out = header["input_dim"]
    for spec in header["layers"]:
        n_in, n_out, act = spec["in"], spec["out"], spec["activation"]
        if act not in _ACTIVATIONS:
            raise WeightFormatError(f"{path}: unknown activation {act!r}")
        if n_in != prev_out:
            raise WeightFormatError(
                f"{path}: layer input dim {n_in} does not chain with previous output {prev_out}"
            )
        w_count, b_count = n_in * n_out, n_out
        need = (w_count + b_count) * 4
        if offset + need > len(raw):
            raise WeightFormatError(f"{path}: truncated weight data")
        w = np.frombuffer(raw, dtype="<f4", count=w_count, offset=offset).reshape(n_out, n_in)
        offset += w_count * 4
        b = np.frombuffer(raw, dtype="<f4", count=b_count, offset=offset)
        offset += b_count * 4
        layers.append(Layer(weight=w, bias=b, activation=act))
        prev_out = n_out
    if prev_out != header["output_dim"]:
        raise WeightFormatError(
            f"{path}: declared output dim {header['output_dim']} != final layer {prev_out}"
        )
    if offset != len(raw):
        raise WeightFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return PolicyWeights(
        layers=tuple(layers),
        input_dim=header["input_dim"],
        output_dim=header["output_dim"],
        obs_layout_version=layout,
    )


def make_controller_weights(rng: np.random.Generator) -> PolicyWeights:
    """Random-init controller network: 61 -> 128 -> 128 -> 128 -> 12, ELU + tanh head."""
    dims = [OBS_DIM, 128, 128, 128, ACTION_DIM]
    acts = ["elu", "elu", "elu", "tanh"]
    layers = []
    for i, act in enumerate(acts):
        n_in, n_out = dims[i], dims[i + 1]
        w = rng.standard_normal((n_out, n_in)).astype(np.float32) / math.sqrt(n_in)
        b = np.zeros(n_out, dtype=np.float32)
        layers.append(Layer(weight=w, bias=b, activation=act))
    return PolicyWeights(
        layers=tuple(layers),
        input_dim=OBS_DIM,
        output_dim=ACTION_DIM,
        obs_layout_version=OBS_LAYOUT_VERSION,
    )


def make_adaptation_weights(rng: np.random.Generator) -> PolicyWeights:
    """Random-init adaptation network: flattened history -> 8-dim latent."""
    dims = [ADAPT_HISTORY * PROPRIO_DIM, 256, 128, LATENT_DIM]
    acts = ["elu", "elu", "identity"]
    layers = []
    for i, act in enumerate(acts):
        n_in, n_out = dims[i], dims[i + 1]
        w = rng.standard_normal((n_out, n_in)).astype(np.float32) / math.sqrt(n_in)
        b = np.zeros(n_out, dtype=np.float32)
        layers.append(Layer(weight=w, bias=b, activation=act))
    return PolicyWeights(
        layers=tuple(layers),
        input_dim=dims[0],
        output_dim=LATENT_DIM,
        obs_layout_version=OBS_LAYOUT_VERSION,
    )


def validate_controller_architecture(weights: PolicyWeights) -> None:
    """The controller net must be 3 hidden ELU layers of 128 and a tanh head of 12."""
    shapes = [(l.weight.shape[0], l.activation) for l in weights.layers]
    expected = [(128, "elu"), (128, "elu"), (128, "elu"), (ACTION_DIM, "tanh")]
    if weights.input_dim != OBS_DIM or shapes != expected:
        raise WeightFormatError(
            f"controller net must be {OBS_DIM} -> 3x128 ELU -> tanh({ACTION_DIM}), got "
            f"input {weights.input_dim}, layers {shapes}"
        )


def assemble_observation(
    snapshot,
    command,
    phase: float,
    latent: np.ndarray,
    prev_action: np.ndarray,
) -> np.ndarray:
    """Build the 61-entry observation vector. Raises on any non-finite input:
    NaN must never reach the policy."""
    obs = np.empty(OBS_DIM)
    obs[OBS_GYRO] = snapshot.gyro
    obs[OBS_GRAVITY] = gravity_in_body(snapshot.quat)
    obs[OBS_COMMAND] = (command.v_x, command.v_y, command.omega)
    obs[OBS_EE_POS] = command.ee_position
    obs[OBS_EE_RPY] = command.ee_rpy
    obs[OBS_LEG_Q] = snapshot.q[:N_LEG_JOINTS]
    obs[OBS_LEG_DQ] = snapshot.dq[:N_LEG_JOINTS]
    obs[OBS_PREV_ACTION] = prev_action
    obs[OBS_PHASE] = (math.sin(phase), math.cos(phase))
    obs[OBS_LATENT] = latent
    if not np.all(np.isfinite(obs)):
        bad = int(np.argmax(~np.isfinite(obs)))
        raise ValueError(f"non-finite observation at index {bad}")
    return obs


def proprio_slice(snapshot, prev_action: np.ndarray) -> np.ndarray:
    """The 42-entry proprioceptive slice fed to the adaptation history."""
    out = np.empty(PROPRIO_DIM)
    out[0:3] = snapshot.gyro
    out[3:6] = gravity_in_body(snapshot.quat)
    out[6:18] = snapshot.q[:N_LEG_JOINTS]
    out[18:30] = snapshot.dq[:N_LEG_JOINTS]
    out[30:42] = prev_action
    return out


def map_action(action: np.ndarray, model: RobotModel, action_scale: float) -> np.ndarray:
    """Normalized action -> 12 leg joint targets around the default pose,
    clamped to the joint limits."""
    action = np.asarray(action, dtype=float)
    if action.shape != (ACTION_DIM,):
        raise ValueError(f"expected ({ACTION_DIM},) action, got {action.shape}")
    if np.any(np.abs(action) > 1.0 + 1e-9):
        raise ValueError("action components must lie in [-1, 1]")
    targets = model.default_pose[:N_LEG_JOINTS] + action * action_scale
    return np.clip(
        targets,
        model.joint_limits.q_lower[:N_LEG_JOINTS],
        model.joint_limits.q_upper[:N_LEG_JOINTS],
    )


def advance_phase(phase: float, dt: float, gait_frequency_hz: float) -> float:
    """phase' = (phase + 2*pi*f*dt) mod 2*pi."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    return math.fmod(phase + 2.0 * math.pi * gait_frequency_hz * dt, 2.0 * math.pi)


class AdaptationModule:
    """Online extrinsics estimator: MLP over a ring of proprioceptive slices.

    Before the ring fills, it is padded with the first sample. Owned by the
    control thread; not thread safe.
    """

    def __init__(self, weights: PolicyWeights):
        expected = ADAPT_HISTORY * PROPRIO_DIM
        if weights.input_dim != expected or weights.output_dim != LATENT_DIM:
            raise WeightFormatError(
                f"adaptation net must map {expected} -> {LATENT_DIM}, got "
                f"{weights.input_dim} -> {weights.output_dim}"
            )
        self._weights = weights
        self._ring: list[np.ndarray] = []

    def reset(self) -> None:
        self._ring.clear()

    def update(self, snapshot, prev_action: np.ndarray) -> np.ndarray:
        sample = proprio_slice(snapshot, prev_action)
        if not self._ring:
            self._ring = [sample] * ADAPT_HISTORY
        else:
            self._ring.pop(0)
            self._ring.append(sample)
        return mlp_forward(self._weights, np.concatenate(self._ring))


class ConstantLatent:
    """Fixed extrinsics latent for runs without an adaptation bundle."""

    def __init__(self, value: np.ndarray | None = None):
        self._value = np.zeros(LATENT_DIM) if value is None else np.asarray(value, dtype=float)
        if self._value.shape != (LATENT_DIM,) or not np.all(np.isfinite(self._value)):
            raise ValueError(f"latent must be a finite ({LATENT_DIM},) vector")

    def reset(self) -> None:
        pass

    def update(self, snapshot, prev_action: np.ndarray) -> np.ndarray:
        return self._value
