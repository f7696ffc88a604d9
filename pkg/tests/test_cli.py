"""CLI tests: manifest validation, scenario artifacts, batch tools."""

from __future__ import annotations

import filecmp
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from modhand.cli import load_manifest, main
from modhand.errors import ConfigError
from modhand.session import read_session
from modhand.touch import (
    DEFAULT_THRESHOLD,
    QUANT_STEP,
    DetectorConfig,
    PoseSample,
    TouchDetector,
)


def write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def manifest_text(body: str, *, hand="five_finger", params="quiet", seed=0,
                  duration=1.0, output=None) -> str:
    lines = [
        f"hand = {hand}",
        f"params = {params}",
        f"seed = {seed}",
        f"duration = {duration}",
    ]
    if output is not None:
        lines.append(f"output = {output}")
    lines.append(body)
    return "\n".join(lines) + "\n"


def read_angle_csv(path: Path):
    rows = []
    lines = path.read_text().splitlines()
    assert lines[0] == "timestamp_us,finger_id,theta1,theta2,theta3"
    for line in lines[1:]:
        ts, fid, t1, t2, t3 = line.split(",")
        rows.append((int(ts), int(fid), float(t1), float(t2), float(t3)))
    return rows


def read_touch_csv(path: Path):
    lines = path.read_text().splitlines()
    assert lines[0] == "finger_id,joint,onset_us,peak_rad"
    out = []
    for line in lines[1:]:
        fid, joint, onset, peak = line.split(",")
        out.append((int(fid), int(joint), int(onset), float(peak)))
    return out


class TestManifestValidation:
    def check_fails(self, tmp_path, text, match):
        path = write(tmp_path / "run.manifest", text)
        with pytest.raises(ConfigError, match=match):
            load_manifest(path)

    def test_minimal_manifest_loads(self, tmp_path):
        path = write(
            tmp_path / "run.manifest",
            "hand = five_finger\nduration = 2.0\n",
        )
        manifest = load_manifest(path)
        assert len(manifest.hand.fingers) == 5
        assert manifest.duration_s == 2.0
        assert manifest.seed == 0
        assert manifest.events == ()
        assert manifest.output_dir is None
        assert manifest.text.startswith("hand = five_finger")

    def test_missing_hand(self, tmp_path):
        self.check_fails(tmp_path, "duration = 1\n", "missing required key 'hand'")

    def test_unknown_hand_names_line(self, tmp_path):
        self.check_fails(
            tmp_path,
            "duration = 1\nhand = no_such_hand\n",
            r"run\.manifest:2: cannot load hand",
        )

    def test_missing_duration(self, tmp_path):
        self.check_fails(tmp_path, "hand = five_finger\n", "duration")

    @pytest.mark.parametrize("count", [0, 6, -1])
    def test_node_count_out_of_range(self, tmp_path, count):
        self.check_fails(
            tmp_path,
            f"hand = five_finger\nduration = 1\nnodes = {count}\n",
            r":3: node count must be 1\.\.5",
        )

    def test_node_count_truncates_hand(self, tmp_path):
        path = write(
            tmp_path / "run.manifest",
            "hand = five_finger\nduration = 1\nnodes = 2\n",
        )
        manifest = load_manifest(path)
        assert [m.role for m in manifest.hand.fingers] == ["thumb", "index"]

    def test_unknown_grasp_names_line(self, tmp_path):
        self.check_fails(
            tmp_path,
            "hand = five_finger\nduration = 2\nevent = 0.5 grasp levitate\n",
            r":3: cannot load grasp 'levitate'",
        )

    def test_grasp_role_not_in_hand(self, tmp_path):
        # Only thumb + index are spawned; a three-finger grasp cannot run.
        self.check_fails(
            tmp_path,
            "hand = five_finger\nnodes = 2\nduration = 2\n"
            "event = 0.5 grasp tripod\n",
            r":4: grasp 'tripod' requires role 'middle'",
        )

    def test_event_times_must_be_non_decreasing(self, tmp_path):
        self.check_fails(
            tmp_path,
            "hand = five_finger\nduration = 5\n"
            "event = 2.0 grasp neutral\nevent = 1.0 grasp neutral\n",
            r":4: event times must be non-decreasing",
        )

    def test_equal_event_times_are_fine(self, tmp_path):
        path = write(
            tmp_path / "run.manifest",
            "hand = five_finger\nduration = 5\n"
            "event = 1.0 perturb 1 0.001 0 0 0.05\n"
            "event = 1.0 perturb 2 0.001 0 0 0.05\n",
        )
        assert len(load_manifest(path).events) == 2

    def test_event_beyond_duration(self, tmp_path):
        self.check_fails(
            tmp_path,
            "hand = five_finger\nduration = 1\nevent = 2.0 grasp neutral\n",
            r":3: event at 2\.0 s is beyond the scenario duration",
        )

    def test_unknown_event_kind(self, tmp_path):
        self.check_fails(
            tmp_path,
            "hand = five_finger\nduration = 1\nevent = 0.5 explode 1\n",
            r":3: unknown event kind 'explode'",
        )

    def test_unknown_finger_in_event(self, tmp_path):
        self.check_fails(
            tmp_path,
            "hand = five_finger\nduration = 1\nevent = 0.5 detach 9\n",
            r":3: finger 9 is not in hand",
        )

    def test_perturb_needs_five_args(self, tmp_path):
        self.check_fails(
            tmp_path,
            "hand = five_finger\nduration = 1\nevent = 0.5 perturb 1 0.01\n",
            r":3: perturb event needs",
        )

    def test_negative_duration(self, tmp_path):
        self.check_fails(
            tmp_path,
            "hand = five_finger\nduration = -2\n",
            "duration must be > 0",
        )

    def test_bad_seed(self, tmp_path):
        self.check_fails(
            tmp_path,
            "hand = five_finger\nduration = 1\nseed = banana\n",
            "seed is not an integer",
        )

    def test_invalid_manifest_exits_nonzero_with_diagnostics(self, tmp_path, capsys):
        path = write(
            tmp_path / "run.manifest",
            "hand = five_finger\nduration = 1\nevent = 0.5 grasp levitate\n",
        )
        code = main(["sim-hand", str(path), "--output", str(tmp_path / "out")])
        captured = capsys.readouterr()
        assert code == 1
        assert "run.manifest:3" in captured.err

    def test_config_root_env_overrides_presets(self, tmp_path, monkeypatch):
        root = tmp_path / "configroot"
        (root / "grasps").mkdir(parents=True)
        write(
            root / "grasps" / "custom_wave.cfg",
            "target = index 0.1 0.08333333 0.06666667\nrequires = index\n",
        )
        monkeypatch.setenv("MODHAND_CONFIG_ROOT", str(root))
        path = write(
            tmp_path / "run.manifest",
            "hand = five_finger\nduration = 3\nevent = 0.2 grasp custom_wave\n",
        )
        manifest = load_manifest(path)
        assert manifest.events[0].args == ("custom_wave",)
        monkeypatch.delenv("MODHAND_CONFIG_ROOT")
        with pytest.raises(ConfigError):
            load_manifest(path)


class TestSimHand:
    def run(self, tmp_path, body, **kwargs) -> Path:
        out = tmp_path / "out"
        kwargs.setdefault("duration", 1.0)
        path = write(
            tmp_path / "run.manifest",
            manifest_text(body, output=out, **kwargs),
        )
        assert main(["sim-hand", str(path)]) == 0
        return out

    def test_empty_scenario_writes_all_zero_csvs(self, tmp_path):
        out = self.run(tmp_path, "", duration=1.0)
        for finger_id in range(5):
            rows = read_angle_csv(out / f"angles_finger{finger_id}.csv")
            assert len(rows) == 200
            assert all(r[1] == finger_id for r in rows)
            assert all(r[2] == r[3] == r[4] == 0.0 for r in rows)
            assert [r[0] for r in rows] == [5000 * i for i in range(200)]
        assert read_touch_csv(out / "touch_events.csv") == []
        assert json.loads((out / "grasp_reports.json").read_text()) == {
            "reports": []
        }

    def test_bend_then_extend_trace_shape(self, tmp_path):
        # Curl the index finger, hold it, then release halfway: the
        # distal angle must rise, sit flat, fall, and settle higher
        # than zero.
        body = (
            "event = 0.3 set_joint 1 0.9 0.75 0.6\n"
            "event = 1.8 set_joint 1 0.45 0.375 0.3\n"
        )
        out = self.run(tmp_path, body, duration=3.0)
        rows = read_angle_csv(out / "angles_finger1.csv")
        theta1 = {ts: t1 for ts, _fid, t1, _t2, _t3 in rows}

        def segment(t0_us, t1_us):
            return [theta1[ts] for ts in sorted(theta1) if t0_us <= ts < t1_us]

        tol = 2 * QUANT_STEP
        before = segment(0, 300_000)
        assert all(abs(v) <= tol for v in before)

        rise = segment(300_000, 600_000)
        assert all(b <= a + 1e-12 for b, a in zip(rise, rise[1:]))
        assert rise[-1] > 0.8

        plateau = segment(600_000, 1_800_000)
        assert all(abs(v - 0.9) <= tol for v in plateau)

        fall = segment(1_800_000, 2_100_000)
        assert all(a <= b + 1e-12 for b, a in zip(fall, fall[1:]))

        settled = segment(2_200_000, 3_000_000)
        assert all(abs(v - 0.45) <= tol for v in settled)
        # "Partial fall": it ends well above zero.
        assert min(settled) > 0.4

    def test_three_perturbations_log_three_touch_events(self, tmp_path):
        body = (
            "event = 1.0 perturb 1 0.002 0 0 0.05\n"
            "event = 1.6 perturb 3 0.002 0 0 0.05\n"
            "event = 2.2 perturb 4 0.002 0 0 0.05\n"
        )
        out = self.run(tmp_path, body, duration=3.0)
        events = read_touch_csv(out / "touch_events.csv")
        assert [e[0] for e in events] == [1, 3, 4]
        for (fid, _joint, onset, peak), t_us in zip(
            events, (1_000_000, 1_600_000, 2_200_000)
        ):
            assert t_us - 50_000 <= onset <= t_us + 100_000
            assert peak >= 2 * DEFAULT_THRESHOLD

    def test_grasp_scenario_writes_report(self, tmp_path):
        out = self.run(tmp_path, "event = 0.2 grasp tip_pinch\n", duration=3.0)
        data = json.loads((out / "grasp_reports.json").read_text())
        assert len(data["reports"]) == 1
        report = data["reports"][0]
        assert report["grasp"] == "tip_pinch"
        assert report["success"] is True
        assert report["timed_out"] is False
        by_role = {f["role"]: f for f in report["fingers"]}
        assert set(by_role) == {"thumb", "index", "middle", "ring", "little"}
        for entry in report["fingers"]:
            assert entry["converged"] is True
            assert max(entry["per_joint_error"]) <= 0.05
            assert entry["error_norm"] == pytest.approx(
                float(np.hypot.reduce(entry["per_joint_error"]))
            )

    def test_detach_scenario_stops_that_fingers_stream(self, tmp_path):
        out = self.run(tmp_path, "event = 0.5 detach 2\n", duration=1.0)
        full = read_angle_csv(out / "angles_finger1.csv")
        cut = read_angle_csv(out / "angles_finger2.csv")
        assert len(full) == 200
        assert len(cut) == 100  # stopped at 0.5 s
        record = read_session(out / "session.mhsr")
        assert record.config_text.startswith("hand = five_finger")

    def test_same_manifest_and_seed_is_byte_identical(self, tmp_path):
        body = (
            "event = 0.2 grasp large_diameter\n"
            "event = 2.0 perturb 1 0.002 0 0 0.05\n"
        )
        path = write(
            tmp_path / "run.manifest",
            manifest_text(body, params="default", seed=77, duration=3.0),
        )
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["sim-hand", str(path), "--output", str(out_a)]) == 0
        assert main(["sim-hand", str(path), "--output", str(out_b)]) == 0
        names = sorted(p.name for p in out_a.iterdir())
        assert names == sorted(p.name for p in out_b.iterdir())
        match, mismatch, errors = filecmp.cmpfiles(
            out_a, out_b, names, shallow=False
        )
        assert match == names and not mismatch and not errors

    def test_different_seed_changes_noisy_artifacts(self, tmp_path):
        path_a = write(
            tmp_path / "a.manifest",
            manifest_text("", params="default", seed=1, duration=0.5),
        )
        path_b = write(
            tmp_path / "b.manifest",
            manifest_text("", params="default", seed=2, duration=0.5),
        )
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["sim-hand", str(path_a), "--output", str(out_a)]) == 0
        assert main(["sim-hand", str(path_b), "--output", str(out_b)]) == 0
        assert (out_a / "session.mhsr").read_bytes() != (
            out_b / "session.mhsr"
        ).read_bytes()

    def test_node_count_limits_spawned_fingers(self, tmp_path):
        out = self.run(tmp_path, "nodes = 2\n", duration=0.5)
        assert (out / "angles_finger0.csv").exists()
        assert (out / "angles_finger1.csv").exists()
        assert not (out / "angles_finger2.csv").exists()

    def test_no_output_dir_anywhere_fails(self, tmp_path, capsys):
        path = write(
            tmp_path / "run.manifest", "hand = five_finger\nduration = 1\n"
        )
        assert main(["sim-hand", str(path)]) == 1
        assert "no output directory" in capsys.readouterr().err

    def test_overlapping_grasps_fail_with_event_context(self, tmp_path, capsys):
        path = write(
            tmp_path / "run.manifest",
            manifest_text(
                "event = 0.2 grasp tip_pinch\nevent = 0.3 grasp tripod\n",
                output=tmp_path / "out",
                duration=3.0,
            ),
        )
        assert main(["sim-hand", str(path)]) == 1
        err = capsys.readouterr().err
        assert "event 'grasp' at 0.3 s" in err
        assert "still executing" in err

    def test_unfinished_grasp_warns(self, tmp_path, capsys):
        path = write(
            tmp_path / "run.manifest",
            manifest_text(
                "event = 0.2 grasp tip_pinch\n",
                output=tmp_path / "out",
                duration=0.5,
            ),
        )
        assert main(["sim-hand", str(path)]) == 0
        assert "still executing" in capsys.readouterr().err
        data = json.loads((tmp_path / "out" / "grasp_reports.json").read_text())
        assert data["reports"] == []


def synth_trace(rng, n_samples, finger_id):
    """Random base pose with a few seeded pulses; returns CSV-ready rows."""
    base = rng.uniform(0.0, 1.0, 3)
    joints = np.tile(base, (n_samples, 1))
    n_pulses = int(rng.integers(0, 4))
    for _ in range(n_pulses):
        start = int(rng.integers(80, n_samples - 40))
        dur = int(rng.integers(8, 25))
        joint = int(rng.integers(0, 3))
        amp = float(rng.uniform(2.5, 8.0)) * DEFAULT_THRESHOLD * rng.choice([-1, 1])
        joints[start : start + dur, joint] += amp
    joints += rng.normal(0.0, QUANT_STEP, joints.shape)
    joints = np.round(joints / QUANT_STEP) * QUANT_STEP
    return [
        (i * 5000, finger_id, joints[i, 0], joints[i, 1], joints[i, 2])
        for i in range(n_samples)
    ]


def rows_to_csv(rows, with_finger):
    lines = (
        ["timestamp_us,finger_id,theta1,theta2,theta3"]
        if with_finger
        else ["timestamp_us,theta1,theta2,theta3"]
    )
    for ts, fid, t1, t2, t3 in rows:
        cells = [str(ts)] + ([str(fid)] if with_finger else [])
        cells += [repr(float(t1)), repr(float(t2)), repr(float(t3))]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def reference_events(rows, config):
    """Feed the same rows straight into streaming detectors."""
    detectors = {}
    events = []
    for seq, (ts, fid, t1, t2, t3) in enumerate(rows, start=1):
        detector = detectors.get(fid)
        if detector is None:
            detector = detectors[fid] = TouchDetector(fid, config)
        events.extend(detector.feed(PoseSample(seq, ts, (t1, t2, t3))))
    events.sort(key=lambda e: (e.onset_us, e.finger_id))
    return [(e.finger_id, e.joint, e.onset_us, e.peak) for e in events]


class TestDetectTouch:
    def test_batch_equals_streaming_on_twenty_traces(self, tmp_path):
        config = DetectorConfig()
        total_events = 0
        for trial in range(20):
            rng = np.random.default_rng(42_000 + trial)
            finger_id = int(rng.integers(0, 8))
            rows = synth_trace(rng, int(rng.integers(400, 900)), finger_id)
            csv_path = write(
                tmp_path / f"trace{trial}.csv", rows_to_csv(rows, with_finger=True)
            )
            out_path = tmp_path / f"events{trial}.csv"
            code = main(
                ["detect-touch", str(csv_path), "--out", str(out_path)]
            )
            assert code == 0
            got = read_touch_csv(out_path)
            want = reference_events(rows, config)
            assert got == want
            total_events += len(got)
        assert total_events > 10  # the corpus genuinely exercises the detector

    def test_four_column_input_uses_finger_flag(self, tmp_path, capsys):
        rng = np.random.default_rng(7)
        rows = synth_trace(rng, 600, finger_id=6)
        csv_path = write(tmp_path / "t.csv", rows_to_csv(rows, with_finger=False))
        assert main(["detect-touch", str(csv_path), "--finger", "6"]) == 0
        out = capsys.readouterr().out
        got = [
            (int(a), int(b), int(c), float(d))
            for a, b, c, d in (
                line.split(",") for line in out.splitlines()[1:]
            )
        ]
        assert got == reference_events(rows, DetectorConfig())
        assert all(fid == 6 for fid, *_ in got) or got == []

    def test_interleaved_fingers_are_tracked_separately(self, tmp_path):
        rng = np.random.default_rng(99)
        rows_a = synth_trace(rng, 700, finger_id=2)
        rows_b = synth_trace(rng, 650, finger_id=5)
        merged = sorted(rows_a + rows_b, key=lambda r: (r[0], r[1]))
        csv_path = write(tmp_path / "t.csv", rows_to_csv(merged, with_finger=True))
        out_path = tmp_path / "events.csv"
        assert main(["detect-touch", str(csv_path), "--out", str(out_path)]) == 0
        assert read_touch_csv(out_path) == reference_events(
            merged, DetectorConfig()
        )

    def test_empty_file_gives_empty_output(self, tmp_path, capsys):
        csv_path = write(tmp_path / "empty.csv", "")
        assert main(["detect-touch", str(csv_path)]) == 0
        out = capsys.readouterr().out
        assert out.splitlines() == ["finger_id,joint,onset_us,peak_rad"]

    def test_constant_trace_has_no_events(self, tmp_path, capsys):
        rows = [(i * 5000, 0, 0.5, 0.25, 0.125) for i in range(2000)]
        csv_path = write(tmp_path / "flat.csv", rows_to_csv(rows, with_finger=True))
        assert main(["detect-touch", str(csv_path)]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 1

    def test_malformed_row_names_the_row(self, tmp_path, capsys):
        csv_path = write(
            tmp_path / "bad.csv",
            "timestamp_us,theta1,theta2,theta3\n5000,0.1,0.2\n",
        )
        assert main(["detect-touch", str(csv_path)]) == 1
        assert "bad.csv:2" in capsys.readouterr().err

    def test_threshold_flag_suppresses_detection(self, tmp_path, capsys):
        rng = np.random.default_rng(3)
        rows = synth_trace(rng, 800, finger_id=0)
        csv_path = write(tmp_path / "t.csv", rows_to_csv(rows, with_finger=True))
        assert main(["detect-touch", str(csv_path), "--threshold", "1.0"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 1


class TestReplayCommand:
    def make_record(self, tmp_path) -> Path:
        out = tmp_path / "out"
        manifest = write(
            tmp_path / "run.manifest",
            manifest_text("event = 0.2 grasp neutral\n", output=out, duration=1.0),
        )
        assert main(["sim-hand", str(manifest)]) == 0
        return out / "session.mhsr"

    def test_max_speed_replay_is_byte_identical(self, tmp_path, capsys):
        record_path = self.make_record(tmp_path)
        out_path = tmp_path / "frames.bin"
        code = main(
            ["replay", str(record_path), "--max-speed", "--out", str(out_path)]
        )
        assert code == 0
        record = read_session(record_path)
        assert out_path.read_bytes() == b"".join(e.frame for e in record.entries)
        assert f"replayed {len(record.entries)} frames" in capsys.readouterr().err

    def test_paced_replay_smoke(self, tmp_path, capsys):
        record_path = self.make_record(tmp_path)
        out_path = tmp_path / "frames.bin"
        code = main(
            ["replay", str(record_path), "--speed", "500", "--out", str(out_path)]
        )
        assert code == 0
        record = read_session(record_path)
        assert out_path.read_bytes() == b"".join(e.frame for e in record.entries)

    def test_corrupt_record_fails_cleanly(self, tmp_path, capsys):
        record_path = self.make_record(tmp_path)
        data = bytearray(record_path.read_bytes())
        del data[len(data) // 2 :]
        broken = tmp_path / "broken.mhsr"
        broken.write_bytes(bytes(data))
        assert main(["replay", str(broken), "--max-speed"]) == 1
        assert "error:" in capsys.readouterr().err


class TestProtocolDump:
    def test_dump_lists_every_frame(self, tmp_path, capsys):
        record_path = TestReplayCommand().make_record(tmp_path)
        record = read_session(record_path)
        assert main(["protocol-dump", str(record_path)]) == 0
        out = capsys.readouterr().out
        assert f"{len(record.entries)} frames" in out
        assert "Hello" in out
        assert "PoseTelemetry" in out
        assert f"[{len(record.entries) - 1}]" in out

    def test_corrupt_frame_names_its_index(self, tmp_path, capsys):
        record_path = TestReplayCommand().make_record(tmp_path)
        data = bytearray(record_path.read_bytes())
        data[-1] ^= 0xFF  # clobber the checksum of the final stored frame
        broken = tmp_path / "broken.mhsr"
        broken.write_bytes(bytes(data))
        record = read_session(broken.read_bytes())
        assert main(["protocol-dump", str(broken)]) == 1
        captured = capsys.readouterr()
        assert f"frame {len(record.entries) - 1} does not decode" in captured.err


class TestConsoleScript:
    def test_module_entry_point_runs(self, tmp_path):
        out = tmp_path / "out"
        manifest = write(
            tmp_path / "run.manifest",
            manifest_text("", output=out, duration=0.2),
        )
        proc = subprocess.run(
            [sys.executable, "-m", "modhand", "sim-hand", str(manifest)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "session.mhsr").exists()
