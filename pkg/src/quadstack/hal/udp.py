"""UDP robot backend and the in-repo loopback echo server.

The backend speaks the wire protocol from ``hal.wire``: commands stream out
at the control rate, a receiver thread decodes state packets into a
latest-value slot. Malformed packets are dropped and counted, never fatal.
Snapshot timestamps are rewritten to the local session clock on arrival so
the control watchdog measures staleness in its own timebase.

``EchoRobot`` implements the robot side of the protocol against a trivial
first-order joint model, so the full stack is testable end to end without
hardware. It streams state packets at a fixed rate on its own thread,
independent of command arrival.
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from ..model import HybridJointCommand, N_JOINTS, RobotModel, StackConfig
from . import LatestSlot, RobotSnapshot
from . import wire


@dataclass
class WireCounters:
    received: int = 0
    bad_magic: int = 0
    bad_crc: int = 0
    bad_length: int = 0
    sent: int = 0


class UdpBackend:
    """HAL backend bridging the control stack to a robot over UDP."""

    def __init__(
        self,
        robot_addr: tuple[str, int],
        clock=time.monotonic,
        bind_addr: tuple[str, int] = ("0.0.0.0", 0),
        stale_after_s: float = 0.05,
    ):
        self._robot_addr = robot_addr
        self._clock = clock
        self._stale_after = stale_after_s
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(bind_addr)
        self._sock.settimeout(0.05)
        self._slot = LatestSlot()
        self._seq = 0
        self.counters = WireCounters()
        self._running = True
        self._rx_thread = threading.Thread(target=self._rx_loop, name="udp-rx", daemon=True)
        self._rx_thread.start()

    def _rx_loop(self) -> None:
        while self._running:
            try:
                data, _ = self._sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                snapshot, _seq = wire.decode_state_packet(data)
            except wire.BadLength:
                self.counters.bad_length += 1
                continue
            except wire.BadMagic:
                self.counters.bad_magic += 1
                continue
            except wire.BadCrc:
                self.counters.bad_crc += 1
                continue
            self.counters.received += 1
            self._slot.put(replace(snapshot, t=float(self._clock())))

    def read_state(self) -> RobotSnapshot | None:
        return self._slot.get()

    def is_stale(self) -> bool:
        snap = self._slot.get()
        return snap is None or (float(self._clock()) - snap.t) > self._stale_after

    def write_command(self, cmd: HybridJointCommand) -> None:
        packet = wire.encode_low_command(cmd, self._seq)
        self._seq += 1
        try:
            self._sock.sendto(packet, self._robot_addr)
            self.counters.sent += 1
        except OSError:
            pass

    def close(self) -> None:
        self._running = False
        try:
            self._sock.close()
        except OSError:
            pass
        self._rx_thread.join(timeout=1.0)


class EchoRobot:
    """Loopback robot: decodes command packets, integrates a first-order joint
    model, and streams state packets at a fixed rate to the last sender."""

    def __init__(
        self,
        model: RobotModel,
        bind_addr: tuple[str, int] = ("127.0.0.1", 0),
        rate_hz: float = 500.0,
        drop_rate: float = 0.0,
        seed: int = 0,
    ):
        self.model = model
        self._period = 1.0 / rate_hz
        self._drop = drop_rate
        self._rng = np.random.default_rng(seed)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(bind_addr)
        self._sock.settimeout(0.002)
        self.addr = self._sock.getsockname()
        self.counters = WireCounters()
        self._client: tuple[str, int] | None = None
        self._cmd = HybridJointCommand.zero()
        self._q = model.default_pose.copy()
        self._dq = np.zeros(N_JOINTS)
        self._seq = 0
        self._running = False
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._running = True
        self._thread = threading.Thread(target=self._loop, name="echo-robot", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        try:
            self._sock.close()
        except OSError:
            pass

    def _loop(self) -> None:
        next_send = time.monotonic()
        while self._running:
            try:
                data, sender = self._sock.recvfrom(2048)
                try:
                    cmd, _seq, _mode = wire.decode_low_command(data)
                    self.counters.received += 1
                    if self._drop > 0 and self._rng.random() < self._drop:
                        cmd = None
                    if cmd is not None:
                        self._cmd = cmd
                        self._client = sender
                except wire.BadLength:
                    self.counters.bad_length += 1
                except wire.BadMagic:
                    self.counters.bad_magic += 1
                except wire.BadCrc:
                    self.counters.bad_crc += 1
            except socket.timeout:
                pass
            except OSError:
                return

            now = time.monotonic()
            if now >= next_send:
                self._advance(self._period)
                if self._client is not None and not (self._drop > 0 and self._rng.random() < self._drop):
                    snap = self._snapshot(now)
                    try:
                        self._sock.sendto(wire.encode_state_packet(snap, self._seq), self._client)
                        self.counters.sent += 1
                        self._seq += 1
                    except OSError:
                        return
                next_send = max(next_send + self._period, now - 5 * self._period)

    def _advance(self, dt: float) -> None:
        # first-order tracking toward commanded positions, velocity-limited
        target = np.where(self._cmd.kp > 0, self._cmd.q_des, self._q)
        step = np.clip(target - self._q, -self.model.joint_limits.dq_max * dt, self.model.joint_limits.dq_max * dt)
        self._dq = step / dt if dt > 0 else np.zeros(N_JOINTS)
        self._q = np.clip(self._q + step, self.model.joint_limits.q_lower, self.model.joint_limits.q_upper)

    def _snapshot(self, now: float) -> RobotSnapshot:
        tau = self._cmd.kp * (self._cmd.q_des - self._q) + self._cmd.kd * (self._cmd.dq_des - self._dq) + self._cmd.tau_ff
        tau = np.clip(tau, -self.model.joint_limits.tau_max, self.model.joint_limits.tau_max)
        return RobotSnapshot(
            t=now,
            q=self._q.copy(),
            dq=self._dq.copy(),
            tau=tau,
            quat=np.array([1.0, 0.0, 0.0, 0.0]),
            gyro=np.zeros(3),
            acc=np.array([0.0, 0.0, 9.81]),
            truth=None,
        )
