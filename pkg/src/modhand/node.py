"""Per-finger controller: one node owns one finger plant.

A finger node is the software stand-in for the microcontroller that
rides on each finger module.  It owns the finger's simulation state
(or, behind the same driver interface, real hardware), announces itself
over its transport, and then runs a fixed schedule:

* plant steps at ``sim_dt``,
* joint-angle telemetry at ``pose_rate`` (default 200 Hz),
* spool-angle telemetry at ``motor_rate`` (default 20 Hz),
* a heartbeat every ``heartbeat_s`` seconds.

Each outgoing stream (pose, motor, control) numbers its frames
independently and without gaps, so a consumer can audit stream
integrity per finger.  Incoming command frames are deduplicated by
sequence number — a command whose seq does not advance past the last
applied one is dropped — and frames addressed to a different finger are
answered with a wrong-finger error rather than applied.

Scheduling is driven entirely by an injected clock.  Under a virtual
clock the node emits exact frame counts (telemetry fires at t = k/rate
precisely); under the wall clock the same code runs live.  Transport
failures are retried a bounded number of times, after which the node
stops cleanly instead of raising.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from modhand.clock import Clock
from modhand.dynamics import (
    MAX_STEP_DT,
    SimulationState,
    motor_targets_for_joints,
    read_sensors,
    step as step_simulation,
)
from modhand.errors import EncodeError, TransportError
from modhand.kinematics import FingerGeometry, JointAngles, geometry_hash
from modhand.protocol import (
    ERR_BAD_COMMAND,
    ERR_WRONG_FINGER,
    FINGER_KINDS,
    DecodedMessage,
    DecodeError,
    ErrorReport,
    Heartbeat,
    Hello,
    MotorTelemetry,
    PoseTelemetry,
    SetJointTargets,
    SetMotorTargets,
    StreamDecoder,
    encode,
    rad_to_urad,
    urad_to_rad,
)
from modhand.transport import Transport

__all__ = ["NodeConfig", "SimFingerDriver", "FingerNode"]

log = logging.getLogger("modhand.node")

#: Outgoing stream names; each carries its own gap-free seq counter.
STREAMS = ("pose", "motor", "control")


@dataclass(frozen=True)
class NodeConfig:
    """Static identity and schedule of one finger node."""

    finger_id: int
    role: str = "generic"
    pose_rate: float = 200.0
    motor_rate: float = 20.0
    heartbeat_s: float = 1.0
    sim_dt: float = 0.002
    sensor_seed: int = 0
    max_send_failures: int = 3

    def __post_init__(self) -> None:
        if not 0 <= self.finger_id <= 255:
            raise ValueError("finger_id must fit in one byte")
        if self.role not in FINGER_KINDS:
            raise ValueError(
                f"role must be one of {sorted(FINGER_KINDS)}, got {self.role!r}"
            )
        if not (self.motor_rate > 0.0 and self.pose_rate >= self.motor_rate):
            raise ValueError("rates must satisfy pose_rate >= motor_rate > 0")
        if not (0.0 < self.sim_dt <= MAX_STEP_DT):
            raise ValueError(f"sim_dt must be in (0, {MAX_STEP_DT}]")
        if self.sim_dt > 1.0 / self.pose_rate:
            raise ValueError("sim_dt must not exceed the pose telemetry period")
        if self.heartbeat_s <= 0.0:
            raise ValueError("heartbeat interval must be > 0")
        if self.max_send_failures < 0:
            raise ValueError("max_send_failures must be >= 0")


class SimFingerDriver:
    """Simulated plant behind the hardware-driver boundary.

    A hardware port replaces this class with one that talks to the real
    sensors and motor controllers; the node is agnostic.
    """

    def __init__(self, state: SimulationState, sensor_seed: int = 0):
        self._state = state
        self._sensor_seed = sensor_seed
        self._reads = 0

    @property
    def state(self) -> SimulationState:
        return self._state

    def step(self, dt: float) -> None:
        step_simulation(self._state, dt)

    def read_pose(self) -> JointAngles:
        angles, _ = read_sensors(self._state, [self._sensor_seed, self._reads])
        self._reads += 1
        return angles

    def motor_angles(self) -> tuple[float, float]:
        motor = self._state.motor
        return motor.flexor_angle, motor.extensor_angle

    def set_motor_targets(
        self, flexor: float, extensor: float, rate_limit: float | None = None
    ) -> None:
        self._state.motor.set_targets(flexor, extensor, rate_limit)

    def set_joint_targets(self, target: JointAngles) -> None:
        clamped = _clamp_to_limits(self._state.geom, target)
        flexor, extensor = motor_targets_for_joints(self._state.tendon, clamped)
        self._state.motor.set_targets(flexor, extensor)

    def geometry_hash(self) -> int:
        return geometry_hash(self._state.geom)


def _clamp_to_limits(geom: FingerGeometry, q: JointAngles) -> JointAngles:
    values = []
    for value, (lo, hi) in zip(
        (q.theta1, q.theta2, q.theta3), geom.joint_limits
    ):
        values.append(min(max(value, lo), hi))
    return JointAngles(*values)


class FingerNode:
    """Schedule-driven controller bound to one transport and one clock."""

    def __init__(
        self,
        config: NodeConfig,
        transport: Transport,
        clock: Clock,
        driver: SimFingerDriver,
    ):
        self.config = config
        self.transport = transport
        self.clock = clock
        self.driver = driver
        self.lifecycle = "init"
        self._decoder = StreamDecoder()
        self._seq = dict.fromkeys(STREAMS, 0)
        self._last_command_seq: int | None = None
        self._send_failures = 0
        #: Commands dropped because their seq did not advance.
        self.duplicate_commands = 0
        #: Decode errors observed on the command stream.
        self.command_errors = 0
        # Schedule bookkeeping (microseconds, kept as float so
        # non-integer periods accumulate without drift at the defaults).
        self._pose_period = 1e6 / config.pose_rate
        self._motor_period = 1e6 / config.motor_rate
        self._heartbeat_period = config.heartbeat_s * 1e6
        self._step_period = config.sim_dt * 1e6
        self._due: dict[str, float] = {}

    # -- lifecycle ------------------------------------------------------

    def start(self) -> None:
        """Announce the node and arm the schedule; idempotent errors."""
        if self.lifecycle != "init":
            raise RuntimeError(f"cannot start from lifecycle {self.lifecycle!r}")
        now = float(self.clock.now_us())
        hello = Hello(
            kind=FINGER_KINDS[self.config.role],
            geometry_hash=self.driver.geometry_hash(),
        )
        self._send("control", hello, now)
        # First telemetry fires immediately (k = 0 tick); the heartbeat
        # waits one interval since the hello just proved liveness.
        self._due = {
            "step": now + self._step_period,
            "pose": now,
            "motor": now,
            "heartbeat": now + self._heartbeat_period,
        }
        self.lifecycle = "running"
        log.info(
            "event=start finger=%d role=%s pose_rate=%g motor_rate=%g",
            self.config.finger_id,
            self.config.role,
            self.config.pose_rate,
            self.config.motor_rate,
        )

    def stop(self, reason: str = "requested") -> None:
        if self.lifecycle == "stopped":
            return
        self.lifecycle = "stopped"
        self.transport.close()
        log.info("event=stop finger=%d reason=%s", self.config.finger_id, reason)

    # -- scheduling -------------------------------------------------------

    def next_due_us(self) -> int | None:
        """Earliest pending activity, or None once stopped."""
        if self.lifecycle != "running":
            return None
        return math.ceil(min(self._due.values()))

    def poll(self) -> None:
        """Apply pending commands, then run everything due by now."""
        if self.lifecycle != "running":
            return
        self._ingest_commands()
        now = self.clock.now_us()
        # Ties run in a fixed order (plant step before telemetry, pose
        # before motor, heartbeat last) so runs are reproducible.
        order = ("step", "pose", "motor", "heartbeat")
        while self.lifecycle == "running":
            kind = min(order, key=lambda k: (self._due[k], order.index(k)))
            due = self._due[kind]
            if due > now:
                break
            self._fire(kind, due)

    def _fire(self, kind: str, due: float) -> None:
        tick_us = int(round(due))
        if kind == "step":
            self.driver.step(self.config.sim_dt)
            self._due["step"] = due + self._step_period
        elif kind == "pose":
            angles = self.driver.read_pose()
            message = PoseTelemetry(
                (
                    rad_to_urad(angles.theta1),
                    rad_to_urad(angles.theta2),
                    rad_to_urad(angles.theta3),
                )
            )
            self._send("pose", message, tick_us)
            self._due["pose"] = due + self._pose_period
        elif kind == "motor":
            flexor, extensor = self.driver.motor_angles()
            message = MotorTelemetry((rad_to_urad(flexor), rad_to_urad(extensor)))
            self._send("motor", message, tick_us)
            self._due["motor"] = due + self._motor_period
        else:
            self._send("control", Heartbeat(), tick_us)
            self._due["heartbeat"] = due + self._heartbeat_period

    def run(self, duration_s: float | None = None) -> None:
        """Live loop: poll, then sleep until the next scheduled activity."""
        if self.lifecycle == "init":
            self.start()
        deadline = (
            None
            if duration_s is None
            else self.clock.now_us() + round(duration_s * 1e6)
        )
        while self.lifecycle == "running":
            if deadline is not None and self.clock.now_us() >= deadline:
                break
            self.poll()
            due = self.next_due_us()
            if due is None:
                break
            if deadline is not None:
                due = min(due, deadline)
            self.clock.sleep_until_us(due)

    # -- command handling -------------------------------------------------

    def _ingest_commands(self) -> None:
        try:
            data = self.transport.recv()
        except TransportError:
            self._send_failures += 1
            if self._send_failures > self.config.max_send_failures:
                self.stop("transport lost")
            return
        if not data:
            return
        for event in self._decoder.feed(data):
            if isinstance(event, DecodeError):
                self._on_decode_error(event)
            else:
                self._apply_command(event)

    def _on_decode_error(self, event: DecodeError) -> None:
        self.command_errors += 1
        log.warning(
            "event=command_decode_error finger=%d kind=%s detail=%s",
            self.config.finger_id,
            event.kind,
            event.detail,
        )
        if event.kind in ("crc", "version", "unknown_type", "payload"):
            self._reply_error(ERR_BAD_COMMAND, f"undecodable command: {event.kind}")

    def _apply_command(self, decoded: DecodedMessage) -> None:
        header, message = decoded.header, decoded.message
        if header.finger_id != self.config.finger_id:
            self._reply_error(
                ERR_WRONG_FINGER,
                f"frame for finger {header.finger_id} reached finger "
                f"{self.config.finger_id}",
            )
            return
        if isinstance(message, (SetMotorTargets, SetJointTargets)):
            if (
                self._last_command_seq is not None
                and header.seq <= self._last_command_seq
            ):
                self.duplicate_commands += 1
                return
            self._last_command_seq = header.seq
            try:
                if isinstance(message, SetMotorTargets):
                    rate = (
                        None
                        if message.rate_urad_s == 0
                        else urad_to_rad(message.rate_urad_s)
                    )
                    self.driver.set_motor_targets(
                        urad_to_rad(message.spools_urad[0]),
                        urad_to_rad(message.spools_urad[1]),
                        rate,
                    )
                else:
                    target = JointAngles(
                        *(urad_to_rad(v) for v in message.joints_urad)
                    )
                    self.driver.set_joint_targets(target)
            except ValueError as exc:
                self._reply_error(ERR_BAD_COMMAND, str(exc))
                return
            log.info(
                "event=command_applied finger=%d seq=%d type=%s",
                self.config.finger_id,
                header.seq,
                type(message).__name__,
            )
        elif isinstance(message, Heartbeat):
            pass  # peer liveness ping; nothing to do
        elif isinstance(message, ErrorReport):
            log.warning(
                "event=peer_error finger=%d code=%d text=%s",
                self.config.finger_id,
                message.code,
                message.text,
            )
        else:
            self._reply_error(
                ERR_BAD_COMMAND,
                f"unexpected {type(message).__name__} frame on command stream",
            )

    def _reply_error(self, code: int, text: str) -> None:
        self._send(
            "control", ErrorReport(code, text[:200]), self.clock.now_us()
        )

    # -- output -----------------------------------------------------------

    def _send(self, stream: str, message, timestamp_us: float) -> None:
        try:
            frame = encode(
                message,
                self.config.finger_id,
                self._seq[stream],
                int(timestamp_us),
            )
        except EncodeError as exc:
            log.error(
                "event=encode_failed finger=%d stream=%s error=%s",
                self.config.finger_id,
                stream,
                exc,
            )
            return
        try:
            self.transport.send(frame)
        except TransportError:
            self._send_failures += 1
            log.warning(
                "event=send_failed finger=%d stream=%s failures=%d",
                self.config.finger_id,
                stream,
                self._send_failures,
            )
            if self._send_failures > self.config.max_send_failures:
                self.stop("transport lost")
            return
        self._seq[stream] += 1
        self._send_failures = 0
