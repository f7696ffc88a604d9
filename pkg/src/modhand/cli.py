"""Command-line entry points for simulation runs and batch tools.

Subcommands
-----------

``sim-hand MANIFEST``
    Build a simulated hand from a run manifest, execute its scripted
    scenario on a virtual clock, and write the artifacts: the raw
    session record, machine-readable grasp reports, the touch-event
    log, and one plot-ready angle CSV per finger.  Identical manifest
    and seed produce byte-identical artifacts.

``detect-touch CSV``
    Run the streaming touch detector over recorded joint-angle samples
    and write the detected contact events.  Produces exactly the events
    a live detector would have produced on the same sample stream.

``replay RECORD``
    Re-emit the raw frames of a session record, preserving relative
    timing scaled by ``--speed``.

``protocol-dump RECORD``
    Decode a session record frame by frame and print a human-readable
    listing with hex payloads.

``serve``
    Run a simulated hand in wall time and expose the operator bridge (a
    WebSocket speaking the JSON schema in ``docs/ui-bridge.md``) for
    interactive clients, optionally recording the session.

Config resolution
-----------------

Where a hand, grasp, or parameter set is named, the name resolves in
order: an explicit path (anything containing a path separator or ending
in ``.cfg``), a file under ``$MODHAND_CONFIG_ROOT/<category>/<name>.cfg``
when that environment variable is set, and finally the packaged preset
of that name.

Exit codes
----------

0   success
1   content or runtime failure (invalid manifest, malformed CSV or
    record, scenario error); diagnostics name the file and line
2   command-line usage error (from argument parsing)

Run manifest format
-------------------

The manifest is a key-value file::

    hand = five_finger          # hand configuration: preset or path
    nodes = 5                   # optional: use only the first N fingers
    params = quiet              # finger parameter set (default: default)
    seed = 7                    # sensor-noise seed (default: 0)
    duration = 3.0              # scenario length in seconds
    output = runs/demo          # output directory (--output overrides)

    # event = <time_s> <kind> <args...>, times non-decreasing
    event = 0.2 grasp tip_pinch
    event = 1.4 set_joint 1 0.3 0.25 0.2
    event = 1.8 perturb 1 0.002 0 0 0.05   # finger, torques (N*m), duration
    event = 2.5 detach 2
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from modhand.clock import WallClock
from modhand.config import (
    GraspSpec,
    HandConfiguration,
    KvFile,
    FingerParams,
    grasp_preset,
    hand_preset,
    load_grasp,
    load_hand,
    load_kv,
    load_params,
    params_preset,
    parse_float,
)
from modhand.dynamics import Perturbation
from modhand.errors import ConfigError, ModhandError
from modhand.kinematics import JointAngles
from modhand.protocol import DecodeError, PoseTelemetry, decode, urad_to_rad
from modhand.session import (
    SessionWriter,
    decode_entries,
    read_session,
    replay,
    replay_schedule,
)
from modhand.sim import HandRig, build_sim_hand
from modhand.touch import ContactEvent, DetectorConfig, TouchDetector, iter_pose_csv

__all__ = ["main", "RunManifest", "ScenarioEvent", "load_manifest"]

CONFIG_ROOT_ENV = "MODHAND_CONFIG_ROOT"

EVENT_KINDS = ("grasp", "perturb", "detach", "set_joint")


# -- config resolution -------------------------------------------------------


def _looks_like_path(raw: str) -> bool:
    return raw.endswith(".cfg") or os.sep in raw or (os.altsep or "/") in raw


def _config_root_file(category: str, name: str) -> Path | None:
    root = os.environ.get(CONFIG_ROOT_ENV)
    if not root:
        return None
    candidate = Path(root) / category / f"{name}.cfg"
    return candidate if candidate.is_file() else None


def resolve_hand(raw: str) -> HandConfiguration:
    if _looks_like_path(raw):
        return load_hand(raw)
    override = _config_root_file("hands", raw)
    if override is not None:
        return load_hand(override)
    return hand_preset(raw)


def resolve_grasp(raw: str) -> GraspSpec:
    if _looks_like_path(raw):
        return load_grasp(raw)
    override = _config_root_file("grasps", raw)
    if override is not None:
        return load_grasp(override)
    return grasp_preset(raw)


def resolve_params(raw: str) -> FingerParams:
    if _looks_like_path(raw):
        return load_params(raw)
    override = _config_root_file("params", raw)
    if override is not None:
        return load_params(override)
    return params_preset(raw)


# -- run manifest -------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioEvent:
    """One timed scenario action."""

    t_us: int
    kind: str
    args: tuple
    line: int


@dataclass(frozen=True)
class RunManifest:
    """Validated scenario script plus everything needed to build the rig."""

    hand: HandConfiguration
    params: FingerParams
    seed: int
    duration_s: float
    output_dir: Path | None
    events: tuple[ScenarioEvent, ...]
    text: str


def _parse_int(raw: str, origin: str, line: int, what: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(
            f"{origin}:{line}: {what} is not an integer: {raw!r}"
        ) from None


def _parse_event(
    kv: KvFile, entry, hand: HandConfiguration, duration_s: float, prev_t: float
) -> ScenarioEvent:
    parts = entry.value.split()
    if len(parts) < 2:
        kv.fail(entry.line, "event entry needs: <time_s> <kind> <args...>")
    t_s = parse_float(parts[0], kv.origin, entry.line, "event time")
    kind, args = parts[1], parts[2:]
    if t_s < 0:
        kv.fail(entry.line, f"event time must be >= 0, got {t_s}")
    if t_s < prev_t:
        kv.fail(
            entry.line,
            f"event times must be non-decreasing ({t_s} after {prev_t})",
        )
    if t_s > duration_s:
        kv.fail(
            entry.line,
            f"event at {t_s} s is beyond the scenario duration {duration_s} s",
        )
    known_ids = {mount.finger_id for mount in hand.fingers}

    def finger_arg(raw: str) -> int:
        finger_id = _parse_int(raw, kv.origin, entry.line, "finger id")
        if finger_id not in known_ids:
            kv.fail(
                entry.line,
                f"finger {finger_id} is not in hand '{hand.name}' "
                f"(has {sorted(known_ids)})",
            )
        return finger_id

    if kind == "grasp":
        if len(args) != 1:
            kv.fail(entry.line, "grasp event needs: <time_s> grasp <name>")
        try:
            spec = resolve_grasp(args[0])
        except ConfigError as exc:
            kv.fail(entry.line, f"cannot load grasp {args[0]!r}: {exc}")
        for role in spec.required_roles:
            if role not in hand.roles:
                kv.fail(
                    entry.line,
                    f"grasp {spec.name!r} requires role {role!r}, which hand "
                    f"'{hand.name}' does not have",
                )
        parsed = (args[0],)
    elif kind == "perturb":
        if len(args) != 5:
            kv.fail(
                entry.line,
                "perturb event needs: <time_s> perturb <finger> "
                "<tau1> <tau2> <tau3> <duration_s>",
            )
        finger_id = finger_arg(args[0])
        torques = tuple(
            parse_float(raw, kv.origin, entry.line, "torque") for raw in args[1:4]
        )
        length = parse_float(args[4], kv.origin, entry.line, "perturb duration")
        if length <= 0:
            kv.fail(entry.line, f"perturb duration must be > 0, got {length}")
        parsed = (finger_id, torques, length)
    elif kind == "detach":
        if len(args) != 1:
            kv.fail(entry.line, "detach event needs: <time_s> detach <finger>")
        parsed = (finger_arg(args[0]),)
    elif kind == "set_joint":
        if len(args) != 4:
            kv.fail(
                entry.line,
                "set_joint event needs: <time_s> set_joint <finger> "
                "<theta1> <theta2> <theta3>",
            )
        finger_id = finger_arg(args[0])
        angles = tuple(
            parse_float(raw, kv.origin, entry.line, "joint angle")
            for raw in args[1:4]
        )
        parsed = (finger_id, angles)
    else:
        kv.fail(
            entry.line,
            f"unknown event kind {kind!r}; expected one of {', '.join(EVENT_KINDS)}",
        )
    return ScenarioEvent(
        t_us=round(t_s * 1e6), kind=kind, args=parsed, line=entry.line
    )


def load_manifest(path: str | Path) -> RunManifest:
    """Parse and fully validate a run manifest file."""
    path = Path(path)
    kv = load_kv(path)
    text = path.read_text()

    hand_raw = kv.get("hand")
    if hand_raw is None:
        raise ConfigError(f"{kv.origin}: missing required key 'hand'")
    hand_entry = kv.get_all("hand")[0]
    try:
        hand = resolve_hand(hand_raw)
    except ConfigError as exc:
        kv.fail(hand_entry.line, f"cannot load hand {hand_raw!r}: {exc}")

    nodes_raw = kv.get("nodes")
    if nodes_raw is not None:
        entry = kv.get_all("nodes")[0]
        count = _parse_int(nodes_raw, kv.origin, entry.line, "node count")
        if not 1 <= count <= len(hand.fingers):
            kv.fail(
                entry.line,
                f"node count must be 1..{len(hand.fingers)} for hand "
                f"'{hand.name}', got {count}",
            )
        hand = HandConfiguration(hand.fingers[:count], name=hand.name)

    params_raw = kv.get("params", "default")
    params_line = next((e.line for e in kv.get_all("params")), 0)
    try:
        params = resolve_params(params_raw)
    except ConfigError as exc:
        kv.fail(params_line, f"cannot load params {params_raw!r}: {exc}")

    seed_raw = kv.get("seed", "0")
    seed_line = next((e.line for e in kv.get_all("seed")), 0)
    seed = _parse_int(seed_raw, kv.origin, seed_line, "seed")

    duration_s = kv.get_float("duration")
    if duration_s <= 0:
        raise ConfigError(f"{kv.origin}: duration must be > 0, got {duration_s}")

    output_raw = kv.get("output")
    output_dir = Path(output_raw) if output_raw else None

    events = []
    prev_t = 0.0
    for entry in kv.get_all("event"):
        event = _parse_event(kv, entry, hand, duration_s, prev_t)
        prev_t = event.t_us / 1e6
        events.append(event)

    return RunManifest(
        hand=hand,
        params=params,
        seed=seed,
        duration_s=duration_s,
        output_dir=output_dir,
        events=tuple(events),
        text=text,
    )


# -- sim-hand -----------------------------------------------------------------


class ScenarioError(ModhandError):
    """A scripted event could not be executed at its scheduled time."""


def _schedule_events(rig: HandRig, manifest: RunManifest) -> None:
    for event in manifest.events:
        fn = _event_action(rig, event)
        rig.kernel.at(event.t_us, fn)


def _event_action(rig: HandRig, event: ScenarioEvent):
    def fail(reason: str) -> ScenarioError:
        t_s = event.t_us / 1e6
        return ScenarioError(
            f"event '{event.kind}' at {t_s} s (manifest line {event.line}): {reason}"
        )

    if event.kind == "grasp":
        (name,) = event.args
        spec = resolve_grasp(name)

        def run_grasp():
            try:
                rig.coordinator.execute_grasp(spec)
            except ModhandError as exc:
                raise fail(str(exc)) from exc
            except RuntimeError as exc:
                raise fail(str(exc)) from exc

        return run_grasp
    if event.kind == "perturb":
        finger_id, torques, length = event.args

        def run_perturb():
            rig.states[finger_id].add_perturbation(
                Perturbation(torques, start=event.t_us / 1e6, duration=length)
            )

        return run_perturb
    if event.kind == "detach":
        (finger_id,) = event.args

        def run_detach():
            rig.detach(finger_id)

        return run_detach
    if event.kind == "set_joint":
        finger_id, angles = event.args

        def run_set_joint():
            try:
                rig.coordinator.send_joint_targets(finger_id, JointAngles(*angles))
            except KeyError as exc:
                raise fail(f"finger {finger_id} is not connected") from exc

        return run_set_joint
    raise AssertionError(f"unreachable event kind {event.kind!r}")


def _float_repr(value: float) -> str:
    return repr(float(value))


def _write_grasp_reports(path: Path, rig: HandRig) -> None:
    reports = [report.as_dict() for report in rig.coordinator.grasp_reports]
    path.write_text(json.dumps({"reports": reports}, indent=2, sort_keys=True) + "\n")


def _write_touch_events(path: Path, events: list[ContactEvent]) -> None:
    lines = ["finger_id,joint,onset_us,peak_rad"]
    for event in events:
        lines.append(
            f"{event.finger_id},{event.joint},{event.onset_us},"
            f"{_float_repr(event.peak)}"
        )
    path.write_text("\n".join(lines) + "\n")


def _write_angle_csvs(out_dir: Path, record, hand: HandConfiguration) -> list[Path]:
    rows: dict[int, list[str]] = {m.finger_id: [] for m in hand.fingers}
    for decoded in decode_entries(record):
        message = decoded.message
        if not isinstance(message, PoseTelemetry):
            continue
        finger_id = decoded.header.finger_id
        if finger_id not in rows:
            continue
        angles = ",".join(_float_repr(urad_to_rad(v)) for v in message.joints_urad)
        rows[finger_id].append(
            f"{decoded.header.timestamp_us},{finger_id},{angles}"
        )
    paths = []
    for finger_id in sorted(rows):
        path = out_dir / f"angles_finger{finger_id}.csv"
        lines = ["timestamp_us,finger_id,theta1,theta2,theta3"] + rows[finger_id]
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def cmd_sim_hand(args) -> int:
    manifest = load_manifest(args.manifest)
    output_dir = Path(args.output) if args.output else manifest.output_dir
    if output_dir is None:
        print(
            "error: no output directory (set 'output' in the manifest "
            "or pass --output)",
            file=sys.stderr,
        )
        return 1
    output_dir.mkdir(parents=True, exist_ok=True)

    rig = build_sim_hand(manifest.hand, seed=manifest.seed, params=manifest.params)
    record_path = output_dir / "session.mhsr"
    writer = SessionWriter(record_path, start_time_us=0, config_text=manifest.text)
    rig.coordinator.start_recording(writer)
    try:
        rig.start()
        _schedule_events(rig, manifest)
        rig.kernel.run_for(manifest.duration_s)
    finally:
        rig.coordinator.stop_recording()
        writer.close()

    reports_path = output_dir / "grasp_reports.json"
    _write_grasp_reports(reports_path, rig)
    touch_path = output_dir / "touch_events.csv"
    _write_touch_events(touch_path, rig.coordinator.touch_events)
    record = read_session(record_path)
    angle_paths = _write_angle_csvs(output_dir, record, manifest.hand)

    print(f"session record: {record_path} ({len(record.entries)} frames)")
    print(f"grasp reports:  {reports_path} ({len(rig.coordinator.grasp_reports)})")
    for report in rig.coordinator.grasp_reports:
        verdict = "success" if report.success else "FAILED"
        print(f"  grasp {report.grasp}: {verdict}")
    print(f"touch events:   {touch_path} ({len(rig.coordinator.touch_events)})")
    print(f"angle CSVs:     {len(angle_paths)} files in {output_dir}")
    if rig.coordinator.grasp_active:
        print(
            "warning: a grasp was still executing when the scenario ended; "
            "it has no report",
            file=sys.stderr,
        )
    return 0


# -- detect-touch -------------------------------------------------------------


def cmd_detect_touch(args) -> int:
    config = DetectorConfig(
        window=args.window,
        threshold=args.threshold,
        refractory_s=args.refractory,
        baseline_coeff=args.baseline_coeff,
    )
    text = Path(args.csv).read_text()
    detectors: dict[int, TouchDetector] = {}
    events: list[ContactEvent] = []
    for finger_id, sample in iter_pose_csv(text, origin=str(args.csv)):
        if finger_id is None:
            finger_id = args.finger
        detector = detectors.get(finger_id)
        if detector is None:
            detector = detectors[finger_id] = TouchDetector(finger_id, config)
        events.extend(detector.feed(sample))
    events.sort(key=lambda e: (e.onset_us, e.finger_id))
    lines = ["finger_id,joint,onset_us,peak_rad"]
    for event in events:
        lines.append(
            f"{event.finger_id},{event.joint},{event.onset_us},"
            f"{_float_repr(event.peak)}"
        )
    output = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(output)
        print(f"{len(events)} events -> {args.out}")
    else:
        sys.stdout.write(output)
    return 0


# -- replay -------------------------------------------------------------------


def cmd_replay(args) -> int:
    record = read_session(Path(args.record).read_bytes())
    if args.out:
        sink = open(args.out, "wb")
    else:
        sink = sys.stdout.buffer
    try:
        if args.max_speed:
            count = 0
            for _offset, frame in replay_schedule(record, speed=1.0):
                sink.write(frame)
                count += 1
        else:
            count = replay(record, sink.write, WallClock(), speed=args.speed)
        sink.flush()
    finally:
        if args.out:
            sink.close()
    print(f"replayed {count} frames", file=sys.stderr)
    return 0


# -- protocol-dump ------------------------------------------------------------


def cmd_protocol_dump(args) -> int:
    record = read_session(Path(args.record).read_bytes())
    print(
        f"session record: format v{record.format_version}, "
        f"wire v{record.protocol_version}, start {record.start_time_us} us, "
        f"{len(record.entries)} frames"
    )
    if record.config_text:
        print(f"config snapshot: {len(record.config_text)} chars")
    for index, entry in enumerate(record.entries):
        hexdump = entry.frame.hex(" ")
        decoded = decode(entry.frame)
        if isinstance(decoded, DecodeError):
            print(f"[{index}] @{entry.arrival_us}us CORRUPT: {decoded.detail}")
            print(f"      {hexdump}")
            print(
                f"error: frame {index} does not decode ({decoded.kind})",
                file=sys.stderr,
            )
            return 1
        header = decoded.header
        print(
            f"[{index}] @{entry.arrival_us}us finger={header.finger_id} "
            f"seq={header.seq} t={header.timestamp_us}us "
            f"{type(decoded.message).__name__} {decoded.message}"
        )
        print(f"      {hexdump}")
    return 0


# -- serve ----------------------------------------------------------------


def _listen_address(raw: str) -> tuple[str, int]:
    host, sep, port = raw.rpartition(":")
    if not sep or not host:
        raise argparse.ArgumentTypeError(
            f"listen address must be HOST:PORT, got {raw!r}"
        )
    try:
        return host, int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port in {raw!r}") from None


def cmd_serve(args) -> int:
    from modhand.bridge import BridgeServer  # keep socket deps off the fast path

    import time as _time

    hand = resolve_hand(args.hand)
    params = resolve_params(args.params)
    rig = build_sim_hand(hand, seed=args.seed, params=params)

    writer = None
    if args.record:
        config_text = (
            f"hand = {args.hand}\nparams = {args.params}\nseed = {args.seed}\n"
        )
        writer = SessionWriter(
            Path(args.record), start_time_us=0, config_text=config_text
        )
        rig.coordinator.start_recording(writer)

    host, port = args.listen
    server = BridgeServer(
        rig,
        host=host,
        port=port,
        snapshot_period_us=max(1, round(1e6 / args.snapshot_hz)),
    )
    rig.start()
    try:
        bound = server.start()
        print(f"bridge listening on ws://{host}:{bound}", flush=True)
        if args.duration is not None:
            _time.sleep(args.duration)
        else:
            while True:
                _time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        if writer is not None:
            rig.coordinator.stop_recording()
            writer.close()
            print(f"session recorded to {args.record}", file=sys.stderr)
    return 0


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modhand",
        description="Simulated modular hand: scenario runs and batch tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "sim-hand", help="run a scripted scenario on a simulated hand"
    )
    sim.add_argument("manifest", help="run manifest file")
    sim.add_argument(
        "--output", help="output directory (overrides the manifest's 'output')"
    )
    sim.set_defaults(func=cmd_sim_hand)

    detect = sub.add_parser(
        "detect-touch", help="find contact events in a joint-angle CSV"
    )
    detect.add_argument("csv", help="input: timestamp_us,[finger_id,]theta1..theta3")
    detect.add_argument("--out", help="write events here instead of stdout")
    detect.add_argument(
        "--finger",
        type=int,
        default=0,
        help="finger id for 4-column input (default: 0)",
    )
    default_config = DetectorConfig()
    detect.add_argument("--window", type=int, default=default_config.window)
    detect.add_argument(
        "--threshold", type=float, default=default_config.threshold
    )
    detect.add_argument(
        "--refractory", type=float, default=default_config.refractory_s
    )
    detect.add_argument(
        "--baseline-coeff", type=float, default=default_config.baseline_coeff
    )
    detect.set_defaults(func=cmd_detect_touch)

    rep = sub.add_parser("replay", help="re-emit a session record's raw frames")
    rep.add_argument("record", help="session record file")
    rep.add_argument("--out", help="write frames here instead of stdout")
    rep.add_argument(
        "--speed",
        type=float,
        default=1.0,
        help="time multiplier: 2.0 plays twice as fast (default: 1.0)",
    )
    rep.add_argument(
        "--max-speed",
        action="store_true",
        help="skip pacing entirely and emit frames back to back",
    )
    rep.set_defaults(func=cmd_replay)

    dump = sub.add_parser(
        "protocol-dump", help="print a decoded listing of a session record"
    )
    dump.add_argument("record", help="session record file")
    dump.set_defaults(func=cmd_protocol_dump)

    serve = sub.add_parser(
        "serve", help="run a simulated hand live and expose the operator bridge"
    )
    serve.add_argument(
        "--listen",
        type=_listen_address,
        default=("127.0.0.1", 8765),
        help="bridge listen address as HOST:PORT (default: 127.0.0.1:8765)",
    )
    serve.add_argument(
        "--hand", default="five_finger", help="hand configuration (default: five_finger)"
    )
    serve.add_argument(
        "--params", default="default", help="finger parameter set (default: default)"
    )
    serve.add_argument("--seed", type=int, default=0, help="sensor-noise seed")
    serve.add_argument("--record", help="write the session record here while serving")
    serve.add_argument(
        "--duration",
        type=float,
        default=None,
        help="stop after this many wall seconds (default: run until Ctrl+C)",
    )
    serve.add_argument(
        "--snapshot-hz",
        type=float,
        default=30.0,
        help="pose snapshot rate pushed to clients (default: 30)",
    )
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        # Reader went away (e.g. piped into `head`); suppress the noise.
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 0
    except ModhandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
