"""UDP wire protocol: bit-exact binary images of the low-level command and
robot state. Original layout (vendor SDK messages are proprietary); it just
carries equivalent information.

All little-endian. CRC-32 (IEEE polynomial, zlib) over every byte that
precedes the checksum field.

Low command, 396 bytes:
    u32 magic 0x514D4857 | u32 seq | u8 mode | 3 pad bytes |
    19 x { f32 q_des, f32 dq_des, f32 kp, f32 kd, f32 tau_ff } | u32 crc

State, 288 bytes:
    u32 magic 0x514D5354 | u32 seq | u64 t_ns |
    19 x { f32 q, f32 dq, f32 tau } |
    4 x f32 quat wxyz | 3 x f32 gyro | 3 x f32 acc | u32 crc
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from ..model import N_JOINTS, HybridJointCommand
from . import RobotSnapshot

COMMAND_MAGIC = 0x514D4857
STATE_MAGIC = 0x514D5354
COMMAND_SIZE = 396
STATE_SIZE = 288

_CMD_HEAD = struct.Struct("<IIB3x")
_STATE_HEAD = struct.Struct("<IIQ")
_CRC = struct.Struct("<I")

MODE_IDLE = 0
MODE_ACTIVE = 1


class WireError(ValueError):
    pass


class BadLength(WireError):
    pass


class BadMagic(WireError):
    pass


class BadCrc(WireError):
    pass


def encode_low_command(cmd: HybridJointCommand, seq: int, mode: int = MODE_ACTIVE) -> bytes:
    body = bytearray(_CMD_HEAD.pack(COMMAND_MAGIC, seq & 0xFFFFFFFF, mode & 0xFF))
    per_joint = np.empty((N_JOINTS, 5), dtype="<f4")
    per_joint[:, 0] = cmd.q_des
    per_joint[:, 1] = cmd.dq_des
    per_joint[:, 2] = cmd.kp
    per_joint[:, 3] = cmd.kd
    per_joint[:, 4] = cmd.tau_ff
    body += per_joint.tobytes()
    body += _CRC.pack(zlib.crc32(bytes(body)))
    assert len(body) == COMMAND_SIZE
    return bytes(body)


def decode_low_command(data: bytes) -> tuple[HybridJointCommand, int, int]:
    """Returns (command, seq, mode)."""
    if len(data) != COMMAND_SIZE:
        raise BadLength(f"command packet must be {COMMAND_SIZE} bytes, got {len(data)}")
    magic, seq, mode = _CMD_HEAD.unpack_from(data, 0)
    if magic != COMMAND_MAGIC:
        raise BadMagic(f"command magic {magic:#010x} != {COMMAND_MAGIC:#010x}")
    (crc,) = _CRC.unpack_from(data, COMMAND_SIZE - 4)
    if crc != zlib.crc32(data[: COMMAND_SIZE - 4]):
        raise BadCrc("command packet checksum mismatch")
    per_joint = np.frombuffer(data, dtype="<f4", count=N_JOINTS * 5, offset=_CMD_HEAD.size)
    per_joint = per_joint.reshape(N_JOINTS, 5).astype(float)
    cmd = HybridJointCommand(
        q_des=per_joint[:, 0],
        dq_des=per_joint[:, 1],
        kp=per_joint[:, 2],
        kd=per_joint[:, 3],
        tau_ff=per_joint[:, 4],
    )
    return cmd, seq, mode


def encode_state_packet(snapshot: RobotSnapshot, seq: int) -> bytes:
    body = bytearray(_STATE_HEAD.pack(STATE_MAGIC, seq & 0xFFFFFFFF, int(round(snapshot.t * 1e9))))
    per_joint = np.empty((N_JOINTS, 3), dtype="<f4")
    per_joint[:, 0] = snapshot.q
    per_joint[:, 1] = snapshot.dq
    per_joint[:, 2] = snapshot.tau
    body += per_joint.tobytes()
    body += np.asarray(snapshot.quat, dtype="<f4").tobytes()
    body += np.asarray(snapshot.gyro, dtype="<f4").tobytes()
    body += np.asarray(snapshot.acc, dtype="<f4").tobytes()
    body += _CRC.pack(zlib.crc32(bytes(body)))
    assert len(body) == STATE_SIZE
    return bytes(body)


def decode_state_packet(data: bytes) -> tuple[RobotSnapshot, int]:
    """Returns (snapshot, seq). The snapshot carries no sim-only extras."""
    if len(data) != STATE_SIZE:
        raise BadLength(f"state packet must be {STATE_SIZE} bytes, got {len(data)}")
    magic, seq, t_ns = _STATE_HEAD.unpack_from(data, 0)
    if magic != STATE_MAGIC:
        raise BadMagic(f"state magic {magic:#010x} != {STATE_MAGIC:#010x}")
    (crc,) = _CRC.unpack_from(data, STATE_SIZE - 4)
    if crc != zlib.crc32(data[: STATE_SIZE - 4]):
        raise BadCrc("state packet checksum mismatch")
    offset = _STATE_HEAD.size
    per_joint = np.frombuffer(data, dtype="<f4", count=N_JOINTS * 3, offset=offset)
    per_joint = per_joint.reshape(N_JOINTS, 3).astype(float)
    offset += N_JOINTS * 3 * 4
    quat = np.frombuffer(data, dtype="<f4", count=4, offset=offset).astype(float)
    offset += 16
    gyro = np.frombuffer(data, dtype="<f4", count=3, offset=offset).astype(float)
    offset += 12
    acc = np.frombuffer(data, dtype="<f4", count=3, offset=offset).astype(float)
    n = np.linalg.norm(quat)
    quat = quat / n if n > 1e-9 else np.array([1.0, 0.0, 0.0, 0.0])
    snapshot = RobotSnapshot(
        t=t_ns / 1e9,
        q=per_joint[:, 0],
        dq=per_joint[:, 1],
        tau=per_joint[:, 2],
        quat=quat,
        gyro=gyro,
        acc=acc,
        truth=None,
    )
    return snapshot, seq
