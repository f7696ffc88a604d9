"""Central controller: registry, grasp execution, pose cache, recording.

The coordinator is the hub every finger node connects to.  It is
single-threaded and poll-driven: :meth:`Coordinator.poll` drains each
connection, routes the decoded frames, advances the grasp state
machine, and expires silent nodes.  Driven by a virtual clock it is
fully deterministic; driven by the wall clock the same code runs live.

Responsibilities:

* **Registry** — a node becomes active when its HELLO arrives and stays
  active while heartbeats keep coming (3 s window).  Duplicate HELLOs
  for an already-active finger are rejected with an error frame.  A
  re-registration after a clean detach is accepted and resets the
  stream bookkeeping.
* **Telemetry cache** — the latest pose and motor sample per finger,
  with arrival times, so :meth:`hand_pose` can always answer
  immediately and flag staleness instead of blocking.
* **Touch aggregation** — one streaming detector per finger consumes
  the pose stream; detected contacts accumulate in
  :attr:`Coordinator.touch_events`.
* **Grasp execution** — one grasp at a time, staged as pre-shape
  (half-scaled targets), close (full targets), hold, then a settle
  check; the report carries final measured angles and per-joint errors,
  and the success flag is true exactly when every error is within
  tolerance.  A grasp that has not converged by twice its phase budget
  is reported as failed, never raised.
* **Recording** — every valid received frame is appended verbatim to an
  attached session writer with its arrival time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from modhand.clock import Clock
from modhand.config import GraspSpec, HandConfiguration, geometry_preset
from modhand.errors import MissingRoleError, TransportError
from modhand.kinematics import (
    FingerGeometry,
    JointAngles,
    PlanarPoint,
    forward_kinematics,
    geometry_hash,
)
from modhand.protocol import (
    ERR_BAD_COMMAND,
    FINGER_KINDS,
    DecodedMessage,
    DecodeError,
    ErrorReport,
    Heartbeat,
    Hello,
    MotorTelemetry,
    PoseTelemetry,
    SetJointTargets,
    StreamDecoder,
    TouchEvent,
    encode,
    rad_to_urad,
    urad_to_rad,
)
from modhand.session import SessionWriter
from modhand.touch import ContactEvent, DetectorConfig, PoseSample, TouchDetector
from modhand.transport import Transport

__all__ = [
    "CoordinatorConfig",
    "RegistryEntry",
    "FingerPose",
    "HandPose",
    "FingerGraspResult",
    "GraspReport",
    "Coordinator",
]

log = logging.getLogger("modhand.coordinator")

_KIND_NAMES = {code: name for name, code in FINGER_KINDS.items()}


@dataclass(frozen=True)
class CoordinatorConfig:
    """Policy knobs; the defaults match the shipped hand presets."""

    active_timeout_s: float = 3.0
    grasp_tolerance_rad: float = 0.05
    preshape_scale: float = 0.5
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self) -> None:
        if self.active_timeout_s <= 0.0:
            raise ValueError("active timeout must be > 0")
        if self.grasp_tolerance_rad <= 0.0:
            raise ValueError("grasp tolerance must be > 0")
        if not 0.0 <= self.preshape_scale <= 1.0:
            raise ValueError("preshape scale must be in [0, 1]")


class _Connection:
    """One attached transport and its decoder; identity arrives by HELLO."""

    def __init__(self, transport: Transport):
        self.transport = transport
        self.decoder = StreamDecoder()
        self.finger_id: int | None = None
        self.alive = True


@dataclass
class _StreamAudit:
    """Gap bookkeeping for one (finger, stream) pair."""

    last_seq: int | None = None
    frames: int = 0
    gaps: int = 0

    def observe(self, seq: int) -> None:
        if self.last_seq is not None and seq != self.last_seq + 1:
            self.gaps += 1
        self.last_seq = seq
        self.frames += 1


@dataclass
class RegistryEntry:
    """Live state of one registered finger node."""

    finger_id: int
    role: str
    kind: int
    geometry_hash: int
    geometry_warning: bool
    registered_us: int
    last_liveness_us: int
    pose: _StreamAudit = field(default_factory=_StreamAudit)
    motor: _StreamAudit = field(default_factory=_StreamAudit)
    control: _StreamAudit = field(default_factory=_StreamAudit)
    last_pose: JointAngles | None = None
    last_pose_arrival_us: int | None = None
    last_pose_timestamp_us: int | None = None
    last_motor: tuple[float, float] | None = None
    errors_from_node: list[ErrorReport] = field(default_factory=list)


@dataclass(frozen=True)
class FingerPose:
    """One finger's slice of a hand-pose snapshot."""

    finger_id: int
    role: str
    mount_x: float
    mount_y: float
    mount_yaw: float
    angles: JointAngles | None
    tip: PlanarPoint | None
    staleness_us: int | None
    active: bool


@dataclass(frozen=True)
class HandPose:
    """Snapshot of every configured finger at one instant."""

    t_us: int
    fingers: tuple[FingerPose, ...]

    def by_role(self, role: str) -> FingerPose:
        for finger in self.fingers:
            if finger.role == role:
                return finger
        raise KeyError(role)


@dataclass(frozen=True)
class FingerGraspResult:
    """Per-finger outcome of a grasp execution."""

    finger_id: int
    role: str
    target: JointAngles
    final: JointAngles | None
    per_joint_error: tuple[float, float, float]
    error_norm: float
    converged: bool

    def as_dict(self) -> dict:
        """JSON-ready view; angle triples become plain lists.

        A finger that never reported has infinite errors internally;
        those become ``None`` here so the result stays strict JSON
        (``Infinity`` is not valid JSON and breaks standard parsers).
        """
        return {
            "finger_id": self.finger_id,
            "role": self.role,
            "target": [self.target.theta1, self.target.theta2, self.target.theta3],
            "final": (
                [self.final.theta1, self.final.theta2, self.final.theta3]
                if self.final is not None
                else None
            ),
            "per_joint_error": [
                e if math.isfinite(e) else None for e in self.per_joint_error
            ],
            "error_norm": self.error_norm if math.isfinite(self.error_norm) else None,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class GraspReport:
    """Outcome of one grasp execution."""

    grasp: str
    success: bool
    timed_out: bool
    started_us: int
    finished_us: int
    fingers: tuple[FingerGraspResult, ...]

    def as_dict(self) -> dict:
        """JSON-ready view of the whole report."""
        return {
            "grasp": self.grasp,
            "success": self.success,
            "timed_out": self.timed_out,
            "started_us": self.started_us,
            "finished_us": self.finished_us,
            "fingers": [finger.as_dict() for finger in self.fingers],
        }


class _GraspExecution:
    """State machine for one in-flight grasp."""

    def __init__(
        self,
        spec: GraspSpec,
        fingers: dict[int, tuple[str, JointAngles]],
        started_us: int,
    ):
        self.spec = spec
        self.fingers = fingers  # finger_id -> (role, full target)
        self.started_us = started_us
        budget_us = round((spec.preshape_s + spec.close_s + spec.hold_s) * 1e6)
        self.close_at_us = started_us + round(spec.preshape_s * 1e6)
        self.settle_at_us = self.close_at_us + round(spec.close_s * 1e6)
        self.hold_end_us = started_us + budget_us
        self.deadline_us = started_us + 2 * budget_us
        self.phase = "preshape"

    def next_boundary_us(self) -> int:
        if self.phase == "preshape":
            return self.close_at_us
        if self.phase == "close":
            return self.settle_at_us
        if self.phase == "hold":
            return self.hold_end_us
        return self.deadline_us


class Coordinator:
    """Hub for a set of finger-node connections."""

    def __init__(
        self,
        hand: HandConfiguration,
        clock: Clock,
        config: CoordinatorConfig | None = None,
    ):
        self.hand = hand
        self.clock = clock
        self.config = config or CoordinatorConfig()
        self.registry: dict[int, RegistryEntry] = {}
        self.touch_events: list[ContactEvent] = []
        self.grasp_reports: list[GraspReport] = []
        #: Frames that failed to decode, per connection-lifetime total.
        self.decode_errors = 0
        #: Frames from finger ids the hand configuration does not know.
        self.unknown_finger_frames = 0
        self._connections: list[_Connection] = []
        self._by_finger: dict[int, _Connection] = {}
        self._detectors: dict[int, TouchDetector] = {}
        self._command_seq: dict[int, int] = {}
        self._grasp: _GraspExecution | None = None
        self._recorder: SessionWriter | None = None
        self._geometry: dict[int, FingerGeometry] = {}
        self._expected_hash: dict[int, int] = {}
        for mount in hand.fingers:
            geom = geometry_preset(mount.geometry_preset)
            self._geometry[mount.finger_id] = geom
            self._expected_hash[mount.finger_id] = geometry_hash(geom)

    # -- wiring ---------------------------------------------------------

    def attach(self, transport: Transport) -> None:
        """Adopt a new node connection; identity arrives with its HELLO."""
        self._connections.append(_Connection(transport))

    def start_recording(self, writer: SessionWriter) -> None:
        if self._recorder is not None:
            raise RuntimeError("a session recording is already active")
        self._recorder = writer

    def stop_recording(self) -> SessionWriter | None:
        writer, self._recorder = self._recorder, None
        return writer

    def close(self) -> None:
        for connection in self._connections:
            connection.transport.close()
        self._connections.clear()
        self._by_finger.clear()

    # -- scheduling -------------------------------------------------------

    def next_due_us(self) -> int | None:
        """Next moment the coordinator must act (grasp phase boundary)."""
        if self._grasp is None:
            return None
        return self._grasp.next_boundary_us()

    def poll(self) -> None:
        """Ingest everything pending, then advance the grasp machine."""
        for connection in list(self._connections):
            self._drain_connection(connection)
        self._connections = [c for c in self._connections if c.alive]
        self._advance_grasp()

    # -- ingestion --------------------------------------------------------

    def _drain_connection(self, connection: _Connection) -> None:
        try:
            data = connection.transport.recv()
        except TransportError:
            self._drop_connection(connection)
            return
        if not data:
            return
        now = self.clock.now_us()
        for event in connection.decoder.feed(data):
            if isinstance(event, DecodeError):
                self.decode_errors += 1
                if event.kind != "resync":
                    log.warning(
                        "event=decode_error kind=%s detail=%s",
                        event.kind,
                        event.detail,
                    )
                continue
            self._route_frame(connection, event, now)

    def _drop_connection(self, connection: _Connection) -> None:
        connection.alive = False
        connection.transport.close()
        if connection.finger_id is not None:
            self._by_finger.pop(connection.finger_id, None)
            entry = self.registry.pop(connection.finger_id, None)
            if entry is not None:
                log.info(
                    "event=detach finger=%d role=%s", entry.finger_id, entry.role
                )

    def _route_frame(
        self, connection: _Connection, decoded: DecodedMessage, now: int
    ) -> None:
        header, message = decoded.header, decoded.message
        if self._recorder is not None:
            raw = encode(message, header.finger_id, header.seq, header.timestamp_us)
            self._recorder.append(now, raw)

        if isinstance(message, Hello):
            self._register(connection, decoded, now)
            return

        entry = self.registry.get(header.finger_id)
        if entry is None or self._by_finger.get(header.finger_id) is not connection:
            # Telemetry before HELLO (or after detach): not routable.
            self.unknown_finger_frames += 1
            return

        if isinstance(message, PoseTelemetry):
            entry.pose.observe(header.seq)
            angles = JointAngles(*(urad_to_rad(v) for v in message.joints_urad))
            entry.last_pose = angles
            entry.last_pose_arrival_us = now
            entry.last_pose_timestamp_us = header.timestamp_us
            detector = self._detectors[header.finger_id]
            sample = PoseSample(
                seq=header.seq,
                timestamp_us=header.timestamp_us,
                joints=(angles.theta1, angles.theta2, angles.theta3),
            )
            self.touch_events.extend(detector.feed(sample))
        elif isinstance(message, MotorTelemetry):
            entry.motor.observe(header.seq)
            entry.last_motor = tuple(urad_to_rad(v) for v in message.spools_urad)
        elif isinstance(message, Heartbeat):
            entry.control.observe(header.seq)
            entry.last_liveness_us = now
        elif isinstance(message, ErrorReport):
            entry.control.observe(header.seq)
            entry.errors_from_node.append(message)
            log.warning(
                "event=node_error finger=%d code=%d text=%s",
                header.finger_id,
                message.code,
                message.text,
            )
        elif isinstance(message, TouchEvent):
            entry.control.observe(header.seq)
            self.touch_events.append(
                ContactEvent(
                    finger_id=header.finger_id,
                    joint=message.joint,
                    onset_us=header.timestamp_us,
                    peak=urad_to_rad(message.magnitude_urad),
                )
            )
        else:
            # Command types flowing toward the coordinator are bogus.
            self.unknown_finger_frames += 1

    def _register(
        self, connection: _Connection, decoded: DecodedMessage, now: int
    ) -> None:
        finger_id = decoded.header.finger_id
        hello = decoded.message
        if finger_id in self.registry and self._is_active(
            self.registry[finger_id], now
        ):
            self._reply(
                connection,
                ErrorReport(
                    ERR_BAD_COMMAND, f"finger {finger_id} is already registered"
                ),
            )
            log.warning("event=register_rejected finger=%d", finger_id)
            return
        expected = self._expected_hash.get(finger_id)
        warning = expected is not None and expected != hello.geometry_hash
        if expected is None:
            warning = True  # finger not in the hand configuration at all
        role = _KIND_NAMES.get(hello.kind, "generic")
        mount = self.hand.by_id(finger_id)
        if mount is not None:
            role = mount.role
        entry = RegistryEntry(
            finger_id=finger_id,
            role=role,
            kind=hello.kind,
            geometry_hash=hello.geometry_hash,
            geometry_warning=warning,
            registered_us=now,
            last_liveness_us=now,
        )
        entry.control.observe(decoded.header.seq)
        self.registry[finger_id] = entry
        self._by_finger[finger_id] = connection
        connection.finger_id = finger_id
        self._detectors[finger_id] = TouchDetector(finger_id, self.config.detector)
        self._command_seq.setdefault(finger_id, 0)
        log.info(
            "event=register finger=%d role=%s warning=%s",
            finger_id,
            role,
            warning,
        )

    def _reply(self, connection: _Connection, message) -> None:
        frame = encode(message, 255, 0, self.clock.now_us())
        try:
            connection.transport.send(frame)
        except TransportError:
            self._drop_connection(connection)

    # -- registry views ---------------------------------------------------

    def _is_active(self, entry: RegistryEntry, now: int) -> bool:
        timeout_us = round(self.config.active_timeout_s * 1e6)
        return now - entry.last_liveness_us <= timeout_us

    def active_fingers(self) -> set[int]:
        now = self.clock.now_us()
        return {
            finger_id
            for finger_id, entry in self.registry.items()
            if self._is_active(entry, now)
        }

    def active_roles(self) -> set[str]:
        now = self.clock.now_us()
        return {
            entry.role
            for entry in self.registry.values()
            if self._is_active(entry, now)
        }

    # -- commands -----------------------------------------------------------

    def send_joint_targets(self, finger_id: int, target: JointAngles) -> None:
        connection = self._by_finger.get(finger_id)
        if connection is None:
            raise KeyError(f"finger {finger_id} is not connected")
        seq = self._command_seq[finger_id]
        self._command_seq[finger_id] = seq + 1
        message = SetJointTargets(
            (
                rad_to_urad(target.theta1),
                rad_to_urad(target.theta2),
                rad_to_urad(target.theta3),
            )
        )
        frame = encode(message, finger_id, seq, self.clock.now_us())
        try:
            connection.transport.send(frame)
        except TransportError:
            self._drop_connection(connection)

    # -- hand pose ----------------------------------------------------------

    def hand_pose(self) -> HandPose:
        now = self.clock.now_us()
        fingers = []
        for mount in self.hand.fingers:
            entry = self.registry.get(mount.finger_id)
            angles = entry.last_pose if entry else None
            tip = None
            if angles is not None:
                local = forward_kinematics(self._geometry[mount.finger_id], angles)
                tip = _mount_transform(mount.x, mount.y, mount.yaw, local)
            staleness = None
            if entry is not None and entry.last_pose_arrival_us is not None:
                staleness = now - entry.last_pose_arrival_us
            fingers.append(
                FingerPose(
                    finger_id=mount.finger_id,
                    role=mount.role,
                    mount_x=mount.x,
                    mount_y=mount.y,
                    mount_yaw=mount.yaw,
                    angles=angles,
                    tip=tip,
                    staleness_us=staleness,
                    active=entry is not None and self._is_active(entry, now),
                )
            )
        return HandPose(t_us=now, fingers=tuple(fingers))

    # -- grasp execution ------------------------------------------------------

    def execute_grasp(self, spec: GraspSpec) -> None:
        """Start a grasp; completion lands in :attr:`grasp_reports`."""
        if self._grasp is not None:
            raise RuntimeError(
                f"grasp {self._grasp.spec.name!r} is still executing"
            )
        now = self.clock.now_us()
        role_to_entry = {
            entry.role: entry
            for entry in self.registry.values()
            if self._is_active(entry, now)
        }
        for role in spec.required_roles:
            if role not in role_to_entry:
                raise MissingRoleError(role)
        fingers: dict[int, tuple[str, JointAngles]] = {}
        for role, target in spec.targets.items():
            entry = role_to_entry.get(role)
            if entry is not None:
                fingers[entry.finger_id] = (role, target)
        self._grasp = _GraspExecution(spec, fingers, now)
        scale = self.config.preshape_scale
        for finger_id, (_role, target) in fingers.items():
            preshape = JointAngles(
                target.theta1 * scale, target.theta2 * scale, target.theta3 * scale
            )
            self.send_joint_targets(finger_id, preshape)
        log.info(
            "event=grasp_start name=%s fingers=%s",
            spec.name,
            sorted(fingers),
        )

    @property
    def grasp_active(self) -> bool:
        return self._grasp is not None

    @property
    def grasp_status(self) -> tuple[str, str] | None:
        """(grasp name, phase) of the in-flight grasp, or None when idle."""
        if self._grasp is None:
            return None
        return (self._grasp.spec.name, self._grasp.phase)

    def _advance_grasp(self) -> None:
        grasp = self._grasp
        if grasp is None:
            return
        now = self.clock.now_us()
        if grasp.phase == "preshape" and now >= grasp.close_at_us:
            for finger_id, (_role, target) in grasp.fingers.items():
                self.send_joint_targets(finger_id, target)
            grasp.phase = "close"
        if grasp.phase == "close" and now >= grasp.settle_at_us:
            grasp.phase = "hold"
        if grasp.phase == "hold" and now >= grasp.hold_end_us:
            grasp.phase = "settle"
        if grasp.phase == "settle":
            results = self._evaluate_grasp(grasp)
            converged = all(r.converged for r in results)
            if converged:
                self._finish_grasp(grasp, results, timed_out=False)
            elif now >= grasp.deadline_us:
                self._finish_grasp(grasp, results, timed_out=True)

    def _evaluate_grasp(
        self, grasp: _GraspExecution
    ) -> tuple[FingerGraspResult, ...]:
        tolerance = self.config.grasp_tolerance_rad
        results = []
        for finger_id, (role, target) in sorted(grasp.fingers.items()):
            entry = self.registry.get(finger_id)
            final = entry.last_pose if entry else None
            if final is None:
                errors = (math.inf, math.inf, math.inf)
            else:
                errors = (
                    abs(final.theta1 - target.theta1),
                    abs(final.theta2 - target.theta2),
                    abs(final.theta3 - target.theta3),
                )
            results.append(
                FingerGraspResult(
                    finger_id=finger_id,
                    role=role,
                    target=target,
                    final=final,
                    per_joint_error=errors,
                    error_norm=math.hypot(*errors) if final is not None else math.inf,
                    converged=max(errors) <= tolerance,
                )
            )
        return tuple(results)

    def _finish_grasp(
        self,
        grasp: _GraspExecution,
        results: tuple[FingerGraspResult, ...],
        timed_out: bool,
    ) -> None:
        success = all(r.converged for r in results)
        report = GraspReport(
            grasp=grasp.spec.name,
            success=success,
            timed_out=timed_out,
            started_us=grasp.started_us,
            finished_us=self.clock.now_us(),
            fingers=results,
        )
        self.grasp_reports.append(report)
        self._grasp = None
        log.info(
            "event=grasp_done name=%s success=%s timed_out=%s",
            grasp.spec.name,
            success,
            timed_out,
        )


def _mount_transform(
    x: float, y: float, yaw: float, local: PlanarPoint
) -> PlanarPoint:
    cos_yaw, sin_yaw = math.cos(yaw), math.sin(yaw)
    return PlanarPoint(
        x + cos_yaw * local.x - sin_yaw * local.y,
        y + sin_yaw * local.x + cos_yaw * local.y,
    )
