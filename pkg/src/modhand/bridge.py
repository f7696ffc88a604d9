"""Operator-console bridge: newline-delimited JSON over a WebSocket.

The bridge is the hub's text-message channel for interactive clients.
Every payload in either direction is one JSON object.  On connect the
server sends a ``hello`` describing the hand (mount poses, link lengths,
shipped grasp names) so clients can mirror the forward kinematics and
build their controls without any other backend.  After that the server
pushes, unprompted:

``snapshot``
    The full hand pose at a configurable rate: per-finger joint angles,
    tip position, staleness, and liveness, plus the in-flight grasp
    phase.  Stale fingers are flagged, never hidden.
``touch``
    One message per detected contact event.
``registry``
    Node arrivals, departures, and liveness flips.
``grasp_report``
    The full machine-readable report when a grasp finishes.
``ack`` / ``error``
    Responses to client commands.

Clients send commands:

``{"cmd": "grasp", "name": "<preset>"}``
    Execute a shipped grasp preset.
``{"cmd": "set_joint", "finger_id": N, "angles": [t1, t2, t3]}``
    Send one finger a joint-angle target.
``{"cmd": "inject_touch", "finger_id": N}``
    Poke the simulated finger with a brief external joint torque so the
    full sensing pipeline (plant, sensor, detector) reacts; optional
    keys ``joint`` (0..2), ``torque`` (N*m), ``duration_s``.

:class:`BridgeCore` holds all protocol logic and talks only to a
:class:`~modhand.sim.HandRig`; it is synchronous and socket-free.
:class:`BridgeServer` pairs a core with a WebSocket listener and a
wall-clock pacer thread that keeps the simulation advancing in real
time.  The full schema is documented in ``docs/ui-bridge.md``.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
import time
from dataclasses import dataclass

from modhand.config import geometry_preset, grasp_preset, preset_names
from modhand.coordinator import HandPose
from modhand.dynamics import Perturbation
from modhand.errors import ModhandError
from modhand.kinematics import JointAngles
from modhand.sim import HandRig

__all__ = ["BRIDGE_PROTOCOL", "BridgeCore", "BridgeServer"]

log = logging.getLogger(__name__)

BRIDGE_PROTOCOL = 1

DEFAULT_SNAPSHOT_PERIOD_US = 33_333  # ~30 snapshots per second

_TOUCH_TORQUE_NM = 0.002
_TOUCH_DURATION_S = 0.05


class _CommandError(Exception):
    """Client command rejected; the message is sent back verbatim."""


def _require(cmd: dict, key: str):
    if key not in cmd:
        raise _CommandError(f"missing required key {key!r}")
    return cmd[key]


def _int_field(cmd: dict, key: str) -> int:
    value = _require(cmd, key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise _CommandError(f"{key!r} must be an integer, got {value!r}")
    return value


def _angle_triple(cmd: dict, key: str) -> tuple[float, float, float]:
    value = _require(cmd, key)
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 3
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise _CommandError(f"{key!r} must be a list of three numbers")
    return (float(value[0]), float(value[1]), float(value[2]))


class BridgeCore:
    """JSON protocol logic over a simulated hand rig.

    All methods must be called from the thread that drives the rig's
    kernel; the core itself never touches sockets or other threads.
    """

    def __init__(self, rig: HandRig, *, snapshot_period_us: int = DEFAULT_SNAPSHOT_PERIOD_US):
        if snapshot_period_us <= 0:
            raise ValueError("snapshot period must be positive")
        self.rig = rig
        self.snapshot_period_us = snapshot_period_us
        self._next_snapshot_us = rig.kernel.clock.now_us()
        self._touch_seen = len(rig.coordinator.touch_events)
        self._reports_seen = len(rig.coordinator.grasp_reports)
        self._registry_seen: dict[int, bool] = {}

    # -- outbound ---------------------------------------------------------

    def hello(self) -> dict:
        """Connection greeting: everything a client needs to render."""
        fingers = []
        for mount in self.rig.hand.fingers:
            geom = geometry_preset(mount.geometry_preset)
            fingers.append(
                {
                    "finger_id": mount.finger_id,
                    "role": mount.role,
                    "mount": {"x": mount.x, "y": mount.y, "yaw": mount.yaw},
                    "links": {
                        "l0": geom.l0,
                        "l1": geom.l1,
                        "l2": geom.l2,
                        "l3": geom.l3,
                    },
                }
            )
        return {
            "type": "hello",
            "protocol": BRIDGE_PROTOCOL,
            "snapshot_period_us": self.snapshot_period_us,
            "grasps": preset_names("grasps"),
            "hand": {"name": self.rig.hand.name, "fingers": fingers},
        }

    def snapshot_message(self) -> dict:
        """The current hand pose as one broadcastable message."""
        return _snapshot_dict(
            self.rig.coordinator.hand_pose(), self.rig.coordinator.grasp_status
        )

    def poll(self) -> list[dict]:
        """Collect every broadcast that has become due.

        Emits registry changes, touch events, and finished grasp reports
        since the last call, plus a pose snapshot whenever the snapshot
        period has elapsed.
        """
        messages: list[dict] = []
        coordinator = self.rig.coordinator
        now = self.rig.kernel.clock.now_us()

        active_now = coordinator.active_fingers()
        current: dict[int, bool] = {}
        for finger_id, entry in coordinator.registry.items():
            active = finger_id in active_now
            current[finger_id] = active
            if finger_id not in self._registry_seen:
                messages.append(
                    {
                        "type": "registry",
                        "event": "registered",
                        "finger_id": finger_id,
                        "role": entry.role,
                        "geometry_warning": entry.geometry_warning,
                    }
                )
            elif self._registry_seen[finger_id] != active:
                messages.append(
                    {
                        "type": "registry",
                        "event": "active" if active else "stale",
                        "finger_id": finger_id,
                        "role": entry.role,
                    }
                )
        for finger_id in self._registry_seen:
            if finger_id not in current:
                messages.append(
                    {
                        "type": "registry",
                        "event": "detached",
                        "finger_id": finger_id,
                    }
                )
        self._registry_seen = current

        touches = coordinator.touch_events
        for event in touches[self._touch_seen :]:
            messages.append(
                {
                    "type": "touch",
                    "finger_id": event.finger_id,
                    "joint": event.joint,
                    "onset_us": event.onset_us,
                    "peak_rad": event.peak,
                }
            )
        self._touch_seen = len(touches)

        reports = coordinator.grasp_reports
        for report in reports[self._reports_seen :]:
            messages.append({"type": "grasp_report", "report": report.as_dict()})
        self._reports_seen = len(reports)

        if now >= self._next_snapshot_us:
            messages.append(self.snapshot_message())
            periods_behind = (now - self._next_snapshot_us) // self.snapshot_period_us
            self._next_snapshot_us += (periods_behind + 1) * self.snapshot_period_us

        return messages

    # -- inbound ----------------------------------------------------------

    def handle_command(self, cmd) -> dict:
        """Execute one client command; returns the ack or error reply."""
        try:
            if not isinstance(cmd, dict):
                raise _CommandError("command must be a JSON object")
            name = _require(cmd, "cmd")
            if name == "grasp":
                return self._cmd_grasp(cmd)
            if name == "set_joint":
                return self._cmd_set_joint(cmd)
            if name == "inject_touch":
                return self._cmd_inject_touch(cmd)
            raise _CommandError(f"unknown command {name!r}")
        except _CommandError as exc:
            return _error_reply(cmd, str(exc))

    def _cmd_grasp(self, cmd: dict) -> dict:
        preset = _require(cmd, "name")
        if not isinstance(preset, str):
            raise _CommandError("'name' must be a string")
        try:
            spec = grasp_preset(preset)
        except ModhandError as exc:
            raise _CommandError(str(exc)) from None
        try:
            self.rig.coordinator.execute_grasp(spec)
        except (ModhandError, RuntimeError) as exc:
            raise _CommandError(str(exc)) from None
        return {"type": "ack", "cmd": "grasp", "name": preset}

    def _cmd_set_joint(self, cmd: dict) -> dict:
        finger_id = _int_field(cmd, "finger_id")
        angles = _angle_triple(cmd, "angles")
        try:
            target = JointAngles(*angles)
        except ValueError as exc:
            raise _CommandError(str(exc)) from None
        try:
            self.rig.coordinator.send_joint_targets(finger_id, target)
        except KeyError:
            raise _CommandError(f"finger {finger_id} is not connected") from None
        return {"type": "ack", "cmd": "set_joint", "finger_id": finger_id}

    def _cmd_inject_touch(self, cmd: dict) -> dict:
        finger_id = _int_field(cmd, "finger_id")
        state = self.rig.states.get(finger_id)
        if state is None:
            raise _CommandError(f"finger {finger_id} has no simulated plant")
        joint = cmd.get("joint", 0)
        if joint not in (0, 1, 2):
            raise _CommandError(f"'joint' must be 0, 1, or 2, got {joint!r}")
        torque = cmd.get("torque", _TOUCH_TORQUE_NM)
        duration = cmd.get("duration_s", _TOUCH_DURATION_S)
        if not isinstance(torque, (int, float)) or isinstance(torque, bool):
            raise _CommandError("'torque' must be a number")
        if (
            not isinstance(duration, (int, float))
            or isinstance(duration, bool)
            or duration <= 0
        ):
            raise _CommandError("'duration_s' must be a positive number")
        torques = [0.0, 0.0, 0.0]
        torques[joint] = float(torque)
        state.add_perturbation(
            Perturbation(
                tuple(torques),
                start=self.rig.kernel.clock.now_us() / 1e6,
                duration=float(duration),
            )
        )
        return {"type": "ack", "cmd": "inject_touch", "finger_id": finger_id}


def _snapshot_dict(pose: HandPose, grasp_status: tuple[str, str] | None) -> dict:
    fingers = []
    for finger in pose.fingers:
        fingers.append(
            {
                "finger_id": finger.finger_id,
                "role": finger.role,
                "angles": (
                    [finger.angles.theta1, finger.angles.theta2, finger.angles.theta3]
                    if finger.angles is not None
                    else None
                ),
                "tip": [finger.tip.x, finger.tip.y] if finger.tip is not None else None,
                "staleness_us": finger.staleness_us,
                "active": finger.active,
            }
        )
    grasp = None
    if grasp_status is not None:
        grasp = {"name": grasp_status[0], "phase": grasp_status[1]}
    return {"type": "snapshot", "t_us": pose.t_us, "grasp": grasp, "fingers": fingers}


def _error_reply(cmd, detail: str) -> dict:
    reply = {"type": "error", "detail": detail}
    if isinstance(cmd, dict) and isinstance(cmd.get("cmd"), str):
        reply["cmd"] = cmd["cmd"]
    return reply


class BridgeServer:
    """WebSocket front end plus a wall-clock pacer for one hand rig.

    ``start()`` binds the listener and launches two daemon threads: an
    asyncio loop serving clients, and a pacer that advances the rig's
    virtual-time kernel to match elapsed wall time (so a rig built on a
    virtual clock runs live).  Client commands are queued and executed
    on the pacer thread between kernel steps — the kernel is never
    touched from the socket threads.
    """

    def __init__(
        self,
        rig: HandRig,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
        snapshot_period_us: int = DEFAULT_SNAPSHOT_PERIOD_US,
        pacer_interval_s: float = 0.005,
    ):
        self.core = BridgeCore(rig, snapshot_period_us=snapshot_period_us)
        self.rig = rig
        self.host = host
        self._requested_port = port
        self.port: int | None = None
        self._pacer_interval_s = pacer_interval_s
        self._commands: list = []
        self._commands_lock = threading.Lock()
        self._clients: set = set()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._stop = threading.Event()
        self._ready = threading.Event()
        self._startup_error: BaseException | None = None
        self._io_thread: threading.Thread | None = None
        self._pacer_thread: threading.Thread | None = None

    # -- lifecycle --------------------------------------------------------

    def start(self) -> int:
        """Bind the listener and begin serving; returns the bound port."""
        if self._io_thread is not None:
            raise RuntimeError("bridge server already started")
        self._io_thread = threading.Thread(
            target=self._run_io, name="bridge-io", daemon=True
        )
        self._io_thread.start()
        self._ready.wait(timeout=10.0)
        if self._startup_error is not None:
            raise RuntimeError("bridge server failed to start") from self._startup_error
        if self.port is None:
            raise RuntimeError("bridge server did not come up in time")
        self._pacer_thread = threading.Thread(
            target=self._run_pacer, name="bridge-pacer", daemon=True
        )
        self._pacer_thread.start()
        log.info("event=bridge_listening host=%s port=%d", self.host, self.port)
        return self.port

    def stop(self) -> None:
        """Stop pacing, drop every client, and close the listener."""
        self._stop.set()
        if self._pacer_thread is not None:
            self._pacer_thread.join(timeout=5.0)
        if self._loop is not None:
            self._loop.call_soon_threadsafe(lambda: None)  # wake the loop
        if self._io_thread is not None:
            self._io_thread.join(timeout=5.0)
        log.info("event=bridge_stopped")

    @property
    def client_count(self) -> int:
        return len(self._clients)

    @property
    def url(self) -> str:
        if self.port is None:
            raise RuntimeError("bridge server is not running")
        return f"ws://{self.host}:{self.port}"

    # -- pacer thread -------------------------------------------------------

    def _run_pacer(self) -> None:
        start_wall = time.monotonic()
        start_virtual = self.rig.kernel.clock.now_us()
        while not self._stop.is_set():
            with self._commands_lock:
                commands, self._commands = self._commands, []
            replies = [self.core.handle_command(cmd) for cmd in commands]
            elapsed_us = round((time.monotonic() - start_wall) * 1e6)
            self.rig.kernel.run_until(start_virtual + elapsed_us)
            for message in replies + self.core.poll():
                self._broadcast(message)
            time.sleep(self._pacer_interval_s)

    def _broadcast(self, message: dict) -> None:
        if self._loop is None:
            return
        payload = json.dumps(message)
        self._loop.call_soon_threadsafe(self._send_to_all, payload)

    # -- asyncio side -------------------------------------------------------

    def _send_to_all(self, payload: str) -> None:
        for client in list(self._clients):
            try:
                queue: asyncio.Queue = client.outbox
                queue.put_nowait(payload)
            except Exception:  # defensive: a dying client must not stop others
                self._clients.discard(client)

    def _run_io(self) -> None:
        try:
            asyncio.run(self._serve())
        except BaseException as exc:  # surface bind errors to start()
            self._startup_error = exc
            self._ready.set()

    async def _serve(self) -> None:
        import websockets

        self._loop = asyncio.get_running_loop()
        async with websockets.serve(
            self._handler, self.host, self._requested_port
        ) as server:
            self.port = server.sockets[0].getsockname()[1]
            self._ready.set()
            while not self._stop.is_set():
                await asyncio.sleep(0.05)
            for client in list(self._clients):
                await client.socket.close()

    async def _handler(self, socket) -> None:
        client = _Client(socket, asyncio.Queue())
        sender: asyncio.Future | None = None
        try:
            # Greet before joining the broadcast set so the hello is
            # always the first message a client sees.
            await socket.send(json.dumps(self.core.hello()))
            self._clients.add(client)
            log.info("event=bridge_client_connected peers=%d", len(self._clients))
            sender = asyncio.ensure_future(self._pump_outbox(client))
            async for raw in socket:
                try:
                    cmd = json.loads(raw)
                except json.JSONDecodeError as exc:
                    await socket.send(
                        json.dumps(
                            {"type": "error", "detail": f"invalid JSON: {exc}"}
                        )
                    )
                    continue
                with self._commands_lock:
                    self._commands.append(cmd)
        except Exception:
            pass  # connection torn down; cleanup below
        finally:
            if sender is not None:
                sender.cancel()
            self._clients.discard(client)
            log.info("event=bridge_client_gone peers=%d", len(self._clients))

    async def _pump_outbox(self, client: _Client) -> None:
        try:
            while True:
                payload = await client.outbox.get()
                await client.socket.send(payload)
        except Exception:
            self._clients.discard(client)  # peer went away mid-send


@dataclass(frozen=True, eq=False)
class _Client:
    socket: object
    outbox: asyncio.Queue
