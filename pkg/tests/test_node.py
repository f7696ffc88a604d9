"""Finger-node tests: schedule conformance, command handling, robustness."""

from __future__ import annotations

import dataclasses
import random

import pytest

from modhand.clock import VirtualClock, WallClock
from modhand.config import geometry_preset, params_preset
from modhand.dynamics import SimulationState, equilibrium
from modhand.kinematics import JointAngles, geometry_hash
from modhand.node import FingerNode, NodeConfig, SimFingerDriver
from modhand.protocol import (
    ERR_BAD_COMMAND,
    ERR_WRONG_FINGER,
    FINGER_KINDS,
    DecodedMessage,
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
from modhand.transport import channel_pair

INDEX_GEOM = geometry_preset("index")
QUIET_PARAMS = dataclasses.replace(params_preset("default"), noise_std=0.0)


def make_node(finger_id=1, role="index", noise=False, **config_kwargs):
    """Node + virtual clock + the coordinator-side transport end."""
    params = params_preset("default") if noise else QUIET_PARAMS
    state = SimulationState.from_params(INDEX_GEOM, params)
    driver = SimFingerDriver(state, sensor_seed=finger_id)
    clock = VirtualClock()
    node_end, peer_end = channel_pair()
    config = NodeConfig(finger_id=finger_id, role=role, **config_kwargs)
    node = FingerNode(config, node_end, clock, driver)
    return node, clock, peer_end


def run_virtual(node, clock, until_us):
    """Drive the node until (exclusive) a virtual deadline."""
    if node.lifecycle == "init":
        node.start()
    while node.lifecycle == "running":
        due = node.next_due_us()
        if due is None or due >= until_us:
            break
        clock.advance_to(due)
        node.poll()


def decode_all(peer) -> list[DecodedMessage]:
    decoder = StreamDecoder()
    events = decoder.feed(peer.recv())
    events += decoder.flush()
    assert all(isinstance(e, DecodedMessage) for e in events), events
    return events


def frames_of(events, message_type):
    return [e for e in events if isinstance(e.message, message_type)]


class TestNodeConfig:
    def test_defaults_are_valid(self):
        cfg = NodeConfig(finger_id=0)
        assert cfg.pose_rate == 200.0
        assert cfg.motor_rate == 20.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"finger_id": -1},
            {"finger_id": 256},
            {"finger_id": 1, "role": "pinky"},
            {"finger_id": 1, "pose_rate": 10.0, "motor_rate": 20.0},
            {"finger_id": 1, "motor_rate": 0.0},
            {"finger_id": 1, "sim_dt": 0.0},
            {"finger_id": 1, "sim_dt": 0.06},
            {"finger_id": 1, "pose_rate": 1000.0, "sim_dt": 0.002},
            {"finger_id": 1, "heartbeat_s": 0.0},
            {"finger_id": 1, "max_send_failures": -1},
        ],
    )
    def test_rejects_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            NodeConfig(**kwargs)


class TestAnnouncement:
    def test_hello_is_the_first_frame(self):
        node, clock, peer = make_node(finger_id=4, role="ring")
        node.start()
        events = decode_all(peer)
        assert len(events) >= 1
        first = events[0]
        assert isinstance(first.message, Hello)
        assert first.message.kind == FINGER_KINDS["ring"]
        assert first.message.geometry_hash == geometry_hash(INDEX_GEOM)
        assert first.header.finger_id == 4
        assert first.header.seq == 0

    def test_start_twice_is_an_error(self):
        node, clock, peer = make_node()
        node.start()
        with pytest.raises(RuntimeError):
            node.start()


class TestScheduleConformance:
    def test_exact_frame_counts_over_five_virtual_seconds(self):
        node, clock, peer = make_node()
        run_virtual(node, clock, 5_000_000)
        events = decode_all(peer)

        poses = frames_of(events, PoseTelemetry)
        motors = frames_of(events, MotorTelemetry)
        beats = frames_of(events, Heartbeat)

        assert len(poses) == 1000
        assert len(motors) == 100
        assert [p.header.timestamp_us for p in poses] == [
            5000 * k for k in range(1000)
        ]
        assert [m.header.timestamp_us for m in motors] == [
            50_000 * k for k in range(100)
        ]
        assert [b.header.timestamp_us for b in beats] == [
            1_000_000 * k for k in range(1, 5)
        ]

    def test_per_stream_seq_counters_are_gap_free(self):
        node, clock, peer = make_node()
        run_virtual(node, clock, 2_000_000)
        events = decode_all(peer)
        poses = frames_of(events, PoseTelemetry)
        motors = frames_of(events, MotorTelemetry)
        control = frames_of(events, (Hello, Heartbeat, ErrorReport))
        assert [p.header.seq for p in poses] == list(range(len(poses)))
        assert [m.header.seq for m in motors] == list(range(len(motors)))
        assert [c.header.seq for c in control] == list(range(len(control)))

    def test_quiet_node_reports_rest_pose(self):
        node, clock, peer = make_node()
        run_virtual(node, clock, 500_000)
        for pose in frames_of(decode_all(peer), PoseTelemetry):
            assert pose.message.joints_urad == (0, 0, 0)

    def test_custom_rates_scale_counts(self):
        node, clock, peer = make_node(pose_rate=100.0, motor_rate=10.0)
        run_virtual(node, clock, 3_000_000)
        events = decode_all(peer)
        assert len(frames_of(events, PoseTelemetry)) == 300
        assert len(frames_of(events, MotorTelemetry)) == 30

    def test_wall_clock_rates_within_ten_percent(self):
        params = QUIET_PARAMS
        state = SimulationState.from_params(INDEX_GEOM, params)
        node_end, peer_end = channel_pair()
        node = FingerNode(
            NodeConfig(finger_id=1),
            node_end,
            WallClock(),
            SimFingerDriver(state),
        )
        node.run(duration_s=1.0)
        events = decode_all(peer_end)
        pose_count = len(frames_of(events, PoseTelemetry))
        motor_count = len(frames_of(events, MotorTelemetry))
        assert 180 <= pose_count <= 221
        assert 18 <= motor_count <= 23


class TestCommands:
    def command(self, node, peer, message, seq, finger_id=None, t_us=0):
        finger = node.config.finger_id if finger_id is None else finger_id
        peer.send(encode(message, finger, seq, t_us))
        node.poll()

    def test_set_motor_targets_applies(self):
        node, clock, peer = make_node()
        node.start()
        msg = SetMotorTargets((rad_to_urad(0.8), rad_to_urad(-0.2)), 0)
        self.command(node, peer, msg, seq=1)
        motor = node.driver.state.motor
        assert motor.flexor_target == pytest.approx(0.8, abs=1e-6)
        assert motor.extensor_target == pytest.approx(-0.2, abs=1e-6)
        assert motor.rate_limit == pytest.approx(10.0)  # rate 0 keeps it

    def test_set_motor_rate_updates_when_nonzero(self):
        node, clock, peer = make_node()
        node.start()
        msg = SetMotorTargets((0, 0), rad_to_urad(2.5))
        self.command(node, peer, msg, seq=1)
        assert node.driver.state.motor.rate_limit == pytest.approx(2.5, abs=1e-6)

    def test_joint_target_round_trip_converges(self):
        # A target generated by the plant's own equilibrium map is
        # reachable; commanding it must bring the reported pose within
        # 0.02 rad per joint.
        node, clock, peer = make_node()
        node.start()
        state = node.driver.state
        target = equilibrium(
            INDEX_GEOM,
            JointAngles(0.0, 0.0, 0.0),
            state.tendon,
            state.skin,
            (0.0046, -1.0),
        )
        msg = SetJointTargets(
            (
                rad_to_urad(target.theta1),
                rad_to_urad(target.theta2),
                rad_to_urad(target.theta3),
            )
        )
        self.command(node, peer, msg, seq=1)
        run_virtual(node, clock, 3_000_000)
        poses = frames_of(decode_all(peer), PoseTelemetry)
        final = [urad_to_rad(v) for v in poses[-1].message.joints_urad]
        for measured, wanted in zip(
            final, (target.theta1, target.theta2, target.theta3)
        ):
            assert abs(measured - wanted) <= 0.02

    def test_out_of_range_joint_target_is_clamped_to_limits(self):
        node, clock, peer = make_node()
        node.start()
        msg = SetJointTargets((rad_to_urad(3.0), rad_to_urad(-3.0), 0))
        self.command(node, peer, msg, seq=1)
        # Clamped to the joint limits before conversion: no exception,
        # and the motor targets stay finite and within travel.
        motor = node.driver.state.motor
        assert abs(motor.flexor_target) <= motor.travel
        assert abs(motor.extensor_target) <= motor.travel

    def test_stale_and_duplicate_seqs_are_dropped(self):
        node, clock, peer = make_node()
        node.start()
        first = SetMotorTargets((rad_to_urad(0.5), 0), 0)
        self.command(node, peer, first, seq=5)
        for stale_seq, flexor in ((5, 0.9), (4, 0.7), (1, 0.1)):
            stale = SetMotorTargets((rad_to_urad(flexor), 0), 0)
            self.command(node, peer, stale, seq=stale_seq)
        motor = node.driver.state.motor
        assert motor.flexor_target == pytest.approx(0.5, abs=1e-6)
        assert node.duplicate_commands == 3
        newer = SetMotorTargets((rad_to_urad(0.3), 0), 0)
        self.command(node, peer, newer, seq=6)
        assert motor.flexor_target == pytest.approx(0.3, abs=1e-6)

    def test_wrong_finger_id_gets_error_reply(self):
        node, clock, peer = make_node(finger_id=2)
        node.start()
        msg = SetMotorTargets((rad_to_urad(0.5), 0), 0)
        self.command(node, peer, msg, seq=1, finger_id=9)
        errors = frames_of(decode_all(peer), ErrorReport)
        assert len(errors) == 1
        assert errors[0].message.code == ERR_WRONG_FINGER
        assert node.driver.state.motor.flexor_target == 0.0

    def test_unexpected_message_type_gets_error_reply(self):
        node, clock, peer = make_node()
        node.start()
        self.command(node, peer, PoseTelemetry((0, 0, 0)), seq=1)
        errors = frames_of(decode_all(peer), ErrorReport)
        assert len(errors) == 1
        assert errors[0].message.code == ERR_BAD_COMMAND

    def test_corrupt_command_bytes_get_error_reply_and_survival(self):
        node, clock, peer = make_node()
        node.start()
        frame = bytearray(encode(SetMotorTargets((1000, 0), 0), 1, 1, 0))
        frame[-1] ^= 0xFF  # break the checksum
        peer.send(bytes(frame))
        node.poll()
        run_virtual(node, clock, 200_000)
        events = decode_all(peer)
        errors = frames_of(events, ErrorReport)
        assert len(errors) == 1
        assert errors[0].message.code == ERR_BAD_COMMAND
        # The node keeps streaming telemetry afterwards.
        assert len(frames_of(events, PoseTelemetry)) == 40
        assert node.lifecycle == "running"


class TestTransportLoss:
    def test_peer_loss_stops_node_cleanly(self):
        node, clock, peer = make_node()
        node.start()
        peer.close()
        run_virtual(node, clock, 2_000_000)
        assert node.lifecycle == "stopped"
        assert node.transport.is_closed

    def test_run_loop_exits_after_transport_loss(self):
        params = QUIET_PARAMS
        state = SimulationState.from_params(INDEX_GEOM, params)
        node_end, peer_end = channel_pair()
        node = FingerNode(
            NodeConfig(finger_id=1), node_end, WallClock(), SimFingerDriver(state)
        )
        node.start()
        peer_end.close()
        node.run(duration_s=5.0)  # must exit early, not hang for 5 s
        assert node.lifecycle == "stopped"


class TestDriver:
    def test_geometry_hash_matches_kinematics(self):
        state = SimulationState.from_params(INDEX_GEOM, QUIET_PARAMS)
        assert SimFingerDriver(state).geometry_hash() == geometry_hash(INDEX_GEOM)

    def test_joint_targets_convert_via_excursion(self):
        state = SimulationState.from_params(INDEX_GEOM, QUIET_PARAMS)
        driver = SimFingerDriver(state)
        target = JointAngles(0.3, 0.25, 0.2)
        driver.set_joint_targets(target)
        arms_f = state.tendon.flexor_arms
        arms_e = state.tendon.extensor_arms
        expected_f = sum(
            a * t for a, t in zip(arms_f, (0.3, 0.25, 0.2))
        ) / state.tendon.spool_radius
        expected_e = -sum(
            a * t for a, t in zip(arms_e, (0.3, 0.25, 0.2))
        ) / state.tendon.spool_radius
        assert state.motor.flexor_target == pytest.approx(expected_f)
        assert state.motor.extensor_target == pytest.approx(expected_e)


class TestCommandFuzz:
    def test_hundred_thousand_commands_never_crash_the_node(self):
        node, clock, peer = make_node(finger_id=3)
        node.start()
        rng = random.Random(0xF00D)
        valid_types = [
            lambda: SetMotorTargets(
                (rng.randrange(-6283185, 6283186), rng.randrange(-6283185, 6283186)),
                rng.randrange(0, 6283186),
            ),
            lambda: SetJointTargets(
                tuple(rng.randrange(-6283185, 6283186) for _ in range(3))
            ),
            lambda: Heartbeat(),
            lambda: Hello(rng.randrange(0, 6), rng.randrange(0, 1 << 64)),
            lambda: ErrorReport(rng.randrange(0, 1 << 16), "x" * rng.randrange(0, 20)),
        ]
        batch = bytearray()
        for i in range(100_000):
            message = rng.choice(valid_types)()
            finger = rng.choice((3, 3, 3, 9))
            frame = bytearray(
                encode(message, finger, i, rng.randrange(0, 1 << 40))
            )
            mutation = rng.random()
            if mutation < 0.10:
                frame[rng.randrange(len(frame))] ^= 1 << rng.randrange(8)
            elif mutation < 0.15:
                frame = frame[: rng.randrange(len(frame))]
            elif mutation < 0.18:
                batch += bytes(rng.randrange(256) for _ in range(rng.randrange(1, 8)))
            batch += frame
            if len(batch) >= 65536:
                peer.send(bytes(batch))
                node.poll()
                batch.clear()
                # Drain replies so the peer buffer stays bounded.
                peer.recv()
        if batch:
            peer.send(bytes(batch))
            node.poll()
        assert node.lifecycle == "running"
        # The plant must still be steppable and telemetry still flowing.
        peer.recv()
        run_virtual(node, clock, clock.now_us() + 100_000)
        assert any(
            isinstance(e.message, PoseTelemetry) for e in decode_all(peer)
        )
