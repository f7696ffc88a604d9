"""Streaming touch detection from joint-angle telemetry.

A touch shows up in the angle stream as a short excursion: the finger is
pushed off its commanded pose and springs back within a fraction of a
second.  Commanded motion looks different — the deviation is sustained
and keeps growing until the finger settles at a new pose.  The detector
separates the two with a per-joint predictive baseline and an explicit
excursion state machine:

1. **Baseline** — each joint carries a level + trend tracker (double
   exponential smoothing).  The trend term lets the baseline follow
   steady commanded ramps with near-zero lag, so slow bends never look
   like touches.  The *innovation* is the gap between the incoming
   sample and the one-step prediction.

2. **Trigger** — the detection statistic is the mean innovation over the
   last ``window // 5`` samples (averaging rejects sensor noise).  When
   any joint's statistic crosses the threshold, the detector enters a
   pending state: the baseline freezes (it keeps extrapolating its
   trend but stops learning, so the touch cannot be absorbed into it).
   Triggers require an *impulsive* onset: the statistic must have been
   below half the threshold within the last ``window // 5`` samples.
   Deviations that creep up slowly (residual drift the baseline is
   still absorbing) never fire.

3. **Classify** — if the deviation collapses back below half the
   threshold within ``window`` samples, the excursion was transient: a
   touch event is emitted and a refractory period starts.  If the
   deviation is still present when the window expires, the excursion is
   sustained: it is treated as commanded motion, the baseline is
   re-seeded with a least-squares fit of level and slope over the
   pending samples, and no event is emitted.

The detector consumes samples in sequence order and silently drops
regressions (counted in :attr:`TouchDetector.rejected_samples`).  It
assumes a uniform sample period; the trend is tracked per sample.
Detection arms only after the first full window of samples, giving the
baseline time to settle.

Batch mode (:func:`detect_batch`, :func:`iter_pose_csv`) runs the same
streaming detector over a CSV trace, so file-based and live analysis
produce identical events by construction.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from modhand.errors import ConfigError

__all__ = [
    "DetectorConfig",
    "PoseSample",
    "ContactEvent",
    "TouchDetector",
    "detect_batch",
    "iter_pose_csv",
]

#: One encoder quantization step (16-bit over a full turn), in radians.
QUANT_STEP = 2.0 * math.pi / 65536.0

#: Default trigger level: six quantization steps of sustained deviation.
DEFAULT_THRESHOLD = 6.0 * QUANT_STEP

_JOINTS = 3


@dataclass(frozen=True)
class DetectorConfig:
    """Tuning knobs for the excursion detector.

    window:
        Maximum excursion length in samples; deviations that outlast it
        are classified as commanded motion.  Also the arming delay.
    threshold:
        Trigger level for the mean-innovation statistic, in radians.
    refractory_s:
        Minimum spacing between emitted events, in seconds.
    baseline_coeff:
        Smoothing coefficient for both the level and trend trackers
        (higher = faster adaptation, less noise rejection).
    """

    window: int = 50
    threshold: float = DEFAULT_THRESHOLD
    refractory_s: float = 0.15
    baseline_coeff: float = 0.02

    def __post_init__(self) -> None:
        if self.window < 4:
            raise ValueError("window must be at least 4 samples")
        if not (self.threshold > 0.0):
            raise ValueError("threshold must be positive")
        if self.refractory_s < 0.0:
            raise ValueError("refractory period must be non-negative")
        if not (0.0 < self.baseline_coeff <= 1.0):
            raise ValueError("baseline coefficient must be in (0, 1]")

    @property
    def stat_window(self) -> int:
        """Samples averaged by the detection statistic."""
        return max(1, self.window // 5)


@dataclass(frozen=True)
class PoseSample:
    """One joint-angle telemetry sample for a single finger."""

    seq: int
    timestamp_us: int
    joints: tuple[float, float, float]


@dataclass(frozen=True)
class ContactEvent:
    """A detected touch.

    joint is the index (0 = distal) with the largest deviation; peak is
    that deviation in radians (always >= the configured threshold);
    onset_us is the timestamp of the sample whose statistic crossed the
    threshold — never earlier than the excursion itself.
    """

    finger_id: int
    joint: int
    onset_us: int
    peak: float


@dataclass
class _JointTracker:
    """Level + trend baseline for one joint."""

    level: float = 0.0
    trend: float = 0.0
    seeded: bool = False

    def predict(self) -> float:
        return self.level + self.trend

    def update(self, coeff: float, value: float) -> float:
        """Advance one sample; returns the innovation (value - prediction)."""
        if not self.seeded:
            self.level = value
            self.trend = 0.0
            self.seeded = True
            return 0.0
        predicted = self.predict()
        innovation = value - predicted
        previous_level = self.level
        self.level = predicted + coeff * innovation
        self.trend = coeff * (self.level - previous_level) + (1.0 - coeff) * self.trend
        return innovation


class TouchDetector:
    """Per-finger streaming detector; feed samples, collect events."""

    def __init__(self, finger_id: int, config: DetectorConfig | None = None):
        self.finger_id = finger_id
        self.config = config or DetectorConfig()
        self._trackers = [_JointTracker() for _ in range(_JOINTS)]
        self._innovations: list[deque[float]] = [
            deque(maxlen=self.config.stat_window) for _ in range(_JOINTS)
        ]
        self._recent: deque[tuple[float, float, float]] = deque(
            maxlen=self.config.window + 1
        )
        self._quiet_age = [0, 0, 0]
        self._samples_seen = 0
        self._last_seq: int | None = None
        self._refractory_until_us: int | None = None
        # Pending-excursion state (None when idle).
        self._pending_onset_us: int | None = None
        self._pending_samples = 0
        self._pending_peaks = [0.0, 0.0, 0.0]
        #: Samples dropped because their seq did not advance.
        self.rejected_samples = 0

    # -- public API ----------------------------------------------------

    def feed(self, sample: PoseSample) -> list[ContactEvent]:
        """Process one sample; returns the events it completed (0 or 1)."""
        if self._last_seq is not None and sample.seq <= self._last_seq:
            self.rejected_samples += 1
            return []
        self._last_seq = sample.seq
        self._samples_seen += 1
        self._recent.append(sample.joints)

        if self._pending_onset_us is not None:
            return self._feed_pending(sample)
        return self._feed_idle(sample)

    @property
    def pending(self) -> bool:
        """True while an excursion awaits classification."""
        return self._pending_onset_us is not None

    # -- idle path: track baseline, watch for a trigger ----------------

    def _feed_idle(self, sample: PoseSample) -> list[ContactEvent]:
        coeff = self.config.baseline_coeff
        threshold = self.config.threshold
        snapshot = [(t.level, t.trend) for t in self._trackers]
        stats = []
        for j in range(_JOINTS):
            innovation = self._trackers[j].update(coeff, sample.joints[j])
            history = self._innovations[j]
            history.append(innovation)
            stat = math.fsum(history) / len(history)
            stats.append(stat)
            if abs(stat) < 0.5 * threshold:
                self._quiet_age[j] = 0
            else:
                self._quiet_age[j] += 1

        armed = self._samples_seen > self.config.window
        if not armed:
            return []
        if (
            self._refractory_until_us is not None
            and sample.timestamp_us < self._refractory_until_us
        ):
            return []
        impulsive = any(
            abs(stats[j]) >= threshold
            and self._quiet_age[j] <= self.config.stat_window
            for j in range(_JOINTS)
        )
        if not impulsive:
            return []

        # Trigger: freeze the baseline at its pre-crossing state so the
        # excursion cannot be absorbed into it, and start classifying.
        for j in range(_JOINTS):
            self._trackers[j].level, self._trackers[j].trend = snapshot[j]
            self._innovations[j].pop()
        self._pending_onset_us = sample.timestamp_us
        self._pending_samples = 1
        self._pending_peaks = [0.0, 0.0, 0.0]
        self._score_pending_sample(sample)
        # The crossing statistic itself bounds the true deviation from
        # below, so folding it in guarantees the emitted peak is at
        # least the configured threshold.
        for j in range(_JOINTS):
            if abs(stats[j]) > self._pending_peaks[j]:
                self._pending_peaks[j] = abs(stats[j])
        return []

    # -- pending path: frozen baseline, classify the excursion ---------

    def _feed_pending(self, sample: PoseSample) -> list[ContactEvent]:
        self._pending_samples += 1
        deviation = self._score_pending_sample(sample)

        if deviation < 0.5 * self.config.threshold:
            return [self._emit(sample.timestamp_us)]
        if self._pending_samples >= self.config.window:
            self._reseed_as_commanded()
        return []

    def _score_pending_sample(self, sample: PoseSample) -> float:
        """Track peak deviation; returns this sample's max deviation."""
        worst = 0.0
        for j in range(_JOINTS):
            tracker = self._trackers[j]
            # Extrapolate the frozen baseline along its trend.
            predicted = tracker.level + tracker.trend * self._pending_samples
            deviation = abs(sample.joints[j] - predicted)
            if deviation > self._pending_peaks[j]:
                self._pending_peaks[j] = deviation
            if deviation > worst:
                worst = deviation
        return worst

    def _emit(self, now_us: int) -> ContactEvent:
        joint = max(range(_JOINTS), key=lambda j: self._pending_peaks[j])
        event = ContactEvent(
            finger_id=self.finger_id,
            joint=joint,
            onset_us=self._pending_onset_us,
            peak=self._pending_peaks[joint],
        )
        refractory_us = round(self.config.refractory_s * 1e6)
        self._refractory_until_us = now_us + refractory_us
        # Resume tracking from the extrapolated baseline: the finger is
        # back near it, so no re-seed is needed.
        for tracker in self._trackers:
            tracker.level += tracker.trend * self._pending_samples
        self._quiet_age = [0, 0, 0]
        self._clear_pending()
        return event

    def _reseed_as_commanded(self) -> None:
        """Sustained deviation: adopt the new level and slope, no event.

        Level and slope come from a least-squares line over the pending
        samples, so sensor noise barely perturbs the re-seeded trend.
        """
        count = min(self._pending_samples, len(self._recent))
        recent = list(self._recent)[-count:]
        mean_x = 0.5 * (count - 1)
        denom = sum((i - mean_x) ** 2 for i in range(count))
        for j in range(_JOINTS):
            values = [joints[j] for joints in recent]
            mean_y = math.fsum(values) / count
            if denom > 0.0:
                slope = (
                    math.fsum((i - mean_x) * (values[i] - mean_y) for i in range(count))
                    / denom
                )
            else:
                slope = 0.0
            tracker = self._trackers[j]
            tracker.trend = slope
            tracker.level = mean_y + slope * (count - 1 - mean_x)
            self._innovations[j].clear()
        self._quiet_age = [0, 0, 0]
        self._clear_pending()

    def _clear_pending(self) -> None:
        self._pending_onset_us = None
        self._pending_samples = 0
        self._pending_peaks = [0.0, 0.0, 0.0]


# -- batch mode ---------------------------------------------------------


def detect_batch(
    samples: list[PoseSample],
    config: DetectorConfig | None = None,
    finger_id: int = 0,
) -> list[ContactEvent]:
    """Run the streaming detector over a pre-recorded trace."""
    detector = TouchDetector(finger_id, config)
    events: list[ContactEvent] = []
    for sample in samples:
        events.extend(detector.feed(sample))
    return events


def iter_pose_csv(text: str, origin: str = "<csv>"):
    """Parse an angle-trace CSV into (finger_id | None, PoseSample) rows.

    Accepts two layouts: ``timestamp_us,theta1,theta2,theta3`` (single
    finger) and ``timestamp_us,finger_id,theta1,theta2,theta3`` (mixed
    streams).  Blank lines, ``#`` comments, and a leading header row are
    ignored.  Malformed rows raise :class:`ConfigError` naming the line.
    """
    seq = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if line_no == 1 and fields and not _is_number(fields[0]):
            continue  # header row
        if len(fields) == 4:
            finger: int | None = None
            angle_fields = fields[1:]
        elif len(fields) == 5:
            finger = _parse_int(fields[1], origin, line_no, "finger_id")
            angle_fields = fields[2:]
        else:
            raise ConfigError(
                f"{origin}:{line_no}: expected 4 or 5 comma-separated "
                f"fields, found {len(fields)}"
            )
        timestamp = _parse_int(fields[0], origin, line_no, "timestamp_us")
        joints = tuple(
            _parse_angle(f, origin, line_no) for f in angle_fields
        )
        seq += 1
        yield finger, PoseSample(seq=seq, timestamp_us=timestamp, joints=joints)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _parse_int(text: str, origin: str, line_no: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(
            f"{origin}:{line_no}: {what} must be an integer, got {text!r}"
        ) from None


def _parse_angle(text: str, origin: str, line_no: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(
            f"{origin}:{line_no}: joint angle must be a number, got {text!r}"
        ) from None
    if not math.isfinite(value):
        raise ConfigError(f"{origin}:{line_no}: joint angle must be finite")
    return value
