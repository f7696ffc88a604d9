"""Modular tendon-driven robotic hand stack.

Planar finger kinematics, quasi-static cable-driven finger simulation,
a binary telemetry protocol, per-finger control nodes, and a hand
coordinator with grasp execution, touch detection, and session
record/replay.
"""

__version__ = "0.1.0"

from modhand.kinematics import (
    FingerGeometry,
    JointAngles,
    PlanarPoint,
    forward_kinematics,
    inverse_kinematics,
    jacobian,
    joint_positions,
)

__all__ = [
    "FingerGeometry",
    "JointAngles",
    "PlanarPoint",
    "forward_kinematics",
    "inverse_kinematics",
    "jacobian",
    "joint_positions",
]
