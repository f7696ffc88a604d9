"""Planar three-joint finger kinematics.

The finger is a serial 3R chain in the sagittal plane. Angles are named
from the tip inward: theta1 bends the distal joint, theta2 the middle
joint, theta3 the proximal joint. The root link l3 is a fixed offset
along x that never rotates. Flexion is positive.

All functions here are pure; no shared state, safe from any thread.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_JOINT_LIMITS = ((0.0, math.pi / 2), (0.0, math.pi / 2), (0.0, math.pi / 2))

IK_TOLERANCE = 1e-4
IK_MAX_ITERATIONS = 500
IK_DAMPING = 0.05
IK_MAX_STEP = 0.5
IK_STALL_ITERATIONS = 30

# Which of the three ball-joint parameters carries flexion when a pose
# is exported to the 9-per-finger hand model layout.
FLEXION_SLOT = 2


@dataclass(frozen=True)
class FingerGeometry:
    """Segment lengths in meters, tip to root, plus joint angle limits."""

    l0: float
    l1: float
    l2: float
    l3: float
    joint_limits: tuple[tuple[float, float], ...] = DEFAULT_JOINT_LIMITS

    def __post_init__(self):
        for name in ("l0", "l1", "l2", "l3"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"segment length {name} must be positive and finite, got {val}")
        if len(self.joint_limits) != 3:
            raise ValueError("joint_limits needs exactly 3 (min, max) pairs")
        for i, (lo, hi) in enumerate(self.joint_limits):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"joint {i + 1} limits must satisfy min < max, got ({lo}, {hi})")
            if not lo <= 0.0 <= hi:
                raise ValueError(f"joint {i + 1} limits must bracket the neutral pose, got ({lo}, {hi})")

    @property
    def lengths(self) -> tuple[float, float, float, float]:
        return (self.l0, self.l1, self.l2, self.l3)

    @property
    def max_reach(self) -> float:
        return self.l0 + self.l1 + self.l2 + self.l3

    def lower_bounds(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.joint_limits])

    def upper_bounds(self) -> np.ndarray:
        return np.array([hi for _, hi in self.joint_limits])

    def contains(self, q: JointAngles, tol: float = 0.0) -> bool:
        angles = (q.theta1, q.theta2, q.theta3)
        return all(lo - tol <= a <= hi + tol for a, (lo, hi) in zip(angles, self.joint_limits))


@dataclass(frozen=True)
class JointAngles:
    """Joint angles in radians: distal, middle, proximal."""

    theta1: float
    theta2: float
    theta3: float

    def __post_init__(self):
        for name in ("theta1", "theta2", "theta3"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.theta3])

    @staticmethod
    def from_array(arr) -> "JointAngles":
        a = np.asarray(arr, dtype=float)
        if a.shape != (3,):
            raise ValueError(f"expected 3 angles, got shape {a.shape}")
        return JointAngles(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class PlanarPoint:
    """A point in the finger root frame, meters."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point components must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance_to(self, other: "PlanarPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def _tip_xy(geom: FingerGeometry, t1, t2, t3):
    # Angle-sum expansion of the homogeneous chain product. Accepts
    # scalars or equal-shaped arrays.
    a3 = t3
    a23 = t3 + t2
    a123 = t3 + t2 + t1
    x = geom.l3 + geom.l2 * np.cos(a3) + geom.l1 * np.cos(a23) + geom.l0 * np.cos(a123)
    y = geom.l2 * np.sin(a3) + geom.l1 * np.sin(a23) + geom.l0 * np.sin(a123)
    return x, y


def forward_kinematics(geom: FingerGeometry, q: JointAngles) -> PlanarPoint:
    """Fingertip position in the root frame."""
    x, y = _tip_xy(geom, q.theta1, q.theta2, q.theta3)
    return PlanarPoint(float(x), float(y))


def joint_positions(geom: FingerGeometry, q: JointAngles) -> list[PlanarPoint]:
    """Proximal joint, middle joint, distal joint, and tip, in that order."""
    a3 = q.theta3
    a23 = q.theta3 + q.theta2
    a123 = q.theta3 + q.theta2 + q.theta1
    px, py = geom.l3, 0.0
    mx, my = px + geom.l2 * math.cos(a3), py + geom.l2 * math.sin(a3)
    dx, dy = mx + geom.l1 * math.cos(a23), my + geom.l1 * math.sin(a23)
    tx, ty = dx + geom.l0 * math.cos(a123), dy + geom.l0 * math.sin(a123)
    return [PlanarPoint(px, py), PlanarPoint(mx, my), PlanarPoint(dx, dy), PlanarPoint(tx, ty)]


def jacobian(geom: FingerGeometry, q: JointAngles) -> np.ndarray:
    """2x3 tip velocity map, columns ordered (theta1, theta2, theta3)."""
    s3 = math.sin(q.theta3)
    c3 = math.cos(q.theta3)
    s23 = math.sin(q.theta3 + q.theta2)
    c23 = math.cos(q.theta3 + q.theta2)
    s123 = math.sin(q.theta3 + q.theta2 + q.theta1)
    c123 = math.cos(q.theta3 + q.theta2 + q.theta1)
    j11 = -geom.l0 * s123
    j12 = -geom.l1 * s23 - geom.l0 * s123
    j13 = -geom.l2 * s3 - geom.l1 * s23 - geom.l0 * s123
    j21 = geom.l0 * c123
    j22 = geom.l1 * c23 + geom.l0 * c123
    j23 = geom.l2 * c3 + geom.l1 * c23 + geom.l0 * c123
    return np.array([[j11, j12, j13], [j21, j22, j23]])


@dataclass(frozen=True)
class IKResult:
    """Outcome of an inverse kinematics solve.

    reached is False when the residual never dropped below tolerance
    within the iteration budget; angles then hold the best pose found.
    """

    angles: JointAngles
    residual: float
    reached: bool
    iterations: int


def inverse_kinematics(
    geom: FingerGeometry,
    target: PlanarPoint,
    seed: JointAngles | None = None,
    tolerance: float = IK_TOLERANCE,
    max_iterations: int = IK_MAX_ITERATIONS,
    damping: float = IK_DAMPING,
) -> IKResult:
    """Damped least squares with joint-limit clamping and restarts.

    Each step solves (J J^T + damping^2 I) w = error and applies
    dq = J^T w, capped in norm and clipped to the limits. A stalled
    search restarts from a deterministic pseudo-random in-limit pose;
    the total iteration budget is shared across restarts. Unreachable
    targets come back flagged, never as an exception.
    """
    lb = geom.lower_bounds()
    ub = geom.upper_bounds()
    goal = target.as_array()
    q = seed.as_array() if seed is not None else np.zeros(3)
    q = np.clip(q, lb, ub)

    damp = damping * damping * np.eye(2)
    restart_rng = np.random.default_rng(0)

    def residual_of(qv):
        x, y = _tip_xy(geom, qv[0], qv[1], qv[2])
        return np.array([goal[0] - x, goal[1] - y])

    err = residual_of(q)
    best_q = q.copy()
    best_res = float(np.linalg.norm(err))
    since_improved = 0
    iterations = 0

    while best_res > tolerance and iterations < max_iterations:
        iterations += 1
        jac = jacobian(geom, JointAngles.from_array(q))
        w = np.linalg.solve(jac @ jac.T + damp, err)
        dq = jac.T @ w
        step = float(np.linalg.norm(dq))
        if step > IK_MAX_STEP:
            dq *= IK_MAX_STEP / step
        q = np.clip(q + dq, lb, ub)
        err = residual_of(q)
        res = float(np.linalg.norm(err))
        if res < best_res - 1e-15:
            best_res = res
            best_q = q.copy()
            since_improved = 0
        else:
            since_improved += 1
        # Flat progress or a dead step means a singular pose or a limit
        # corner; jump to a fresh in-limit pose and keep the budget.
        if since_improved >= IK_STALL_ITERATIONS or step < 1e-12:
            q = lb + restart_rng.random(3) * (ub - lb)
            err = residual_of(q)
            since_improved = 0

    return IKResult(
        angles=JointAngles.from_array(best_q),
        residual=best_res,
        reached=best_res <= tolerance,
        iterations=iterations,
    )


def mano_parameters(q: JointAngles, finger_index: int, flexion_slot: int = FLEXION_SLOT) -> np.ndarray:
    """Nine ball-joint parameters for one finger of the hand model.

    Layout is three parameters per joint, ordered root to tip
    (proximal, middle, distal). Only the flexion slot of each triplet
    is driven; the other six entries stay zero.
    """
    if not 0 <= finger_index <= 4:
        raise ValueError(f"finger_index must be 0..4, got {finger_index}")
    if not 0 <= flexion_slot <= 2:
        raise ValueError(f"flexion_slot must be 0..2, got {flexion_slot}")
    out = np.zeros(9)
    out[0 * 3 + flexion_slot] = q.theta3
    out[1 * 3 + flexion_slot] = q.theta2
    out[2 * 3 + flexion_slot] = q.theta1
    return out


def flexion_from_mano(params, flexion_slot: int = FLEXION_SLOT) -> JointAngles:
    """Inverse of mano_parameters: pull the three flexion angles back out."""
    arr = np.asarray(params, dtype=float)
    if arr.shape != (9,):
        raise ValueError(f"expected a 9-vector, got shape {arr.shape}")
    if not 0 <= flexion_slot <= 2:
        raise ValueError(f"flexion_slot must be 0..2, got {flexion_slot}")
    return JointAngles(
        theta1=float(arr[2 * 3 + flexion_slot]),
        theta2=float(arr[1 * 3 + flexion_slot]),
        theta3=float(arr[0 * 3 + flexion_slot]),
    )


def sample_workspace(geom: FingerGeometry, n_per_joint: int) -> list[PlanarPoint]:
    """Tip positions on the n^3 grid spanning the joint limits."""
    if n_per_joint < 2:
        raise ValueError(f"n_per_joint must be >= 2, got {n_per_joint}")
    axes = [np.linspace(lo, hi, n_per_joint) for lo, hi in geom.joint_limits]
    t1, t2, t3 = np.meshgrid(*axes, indexing="ij")
    x, y = _tip_xy(geom, t1.ravel(), t2.ravel(), t3.ravel())
    return [PlanarPoint(float(xi), float(yi)) for xi, yi in zip(x, y)]


def geometry_hash(geom: FingerGeometry) -> int:
    """Stable 64-bit fingerprint of lengths and limits.

    Used in the wire handshake so both ends can confirm they model the
    same finger. Values are canonicalized to fixed-precision text so the
    hash does not depend on float repr details.
    """
    fields = list(geom.lengths)
    for lo, hi in geom.joint_limits:
        fields.extend((lo, hi))
    canon = ",".join("%.12e" % v for v in fields)
    digest = hashlib.sha256(canon.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")
