"""Quasi-static plant model of one cable-driven finger.

Two antagonistic cables act on the three joints through fixed moment
arms: a flexor terminating at the tip and an extensor terminating at
the proximal phalange. Elastic skin pulls every joint back toward
neutral. Motion is modeled as a sequence of static equilibria: each
step moves the motor spools under their rate limit, then solves for
the pose that minimizes elastic energy subject to the cables not
stretching and the joints staying inside their limits.

Cables only pull. Tension shows up as the multiplier of the cable
constraint and is zero whenever the cable is slack, so the solver
enumerates active sets exactly instead of iterating.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from modhand.config import FingerParams
from modhand.errors import OverConstrainedError
from modhand.kinematics import FingerGeometry, JointAngles, PlanarPoint, jacobian

MAX_STEP_DT = 0.05
_TOL = 1e-9


@dataclass(frozen=True)
class TendonConfig:
    """Cable routing: per-joint moment arms and the motor spool radius."""

    flexor_arms: tuple[float, float, float] = (0.004, 0.004, 0.004)
    extensor_arms: tuple[float, float, float] = (0.0, 0.0, 0.005)
    spool_radius: float = 0.005

    def __post_init__(self):
        if any(a < 0 for a in self.flexor_arms + self.extensor_arms):
            raise ValueError("moment arms must be >= 0")
        if any(a <= 0 for a in self.flexor_arms):
            raise ValueError("flexor must wrap every joint with a positive arm")
        if self.spool_radius <= 0:
            raise ValueError("spool radius must be > 0")


@dataclass(frozen=True)
class SkinModel:
    """Elastic skin as independent torsion springs, one per joint."""

    stiffness: tuple[float, float, float] = (0.10, 0.12, 0.15)
    damping: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if any(k <= 0 for k in self.stiffness):
            raise ValueError("stiffness must be > 0 at every joint")
        if any(d < 0 for d in self.damping):
            raise ValueError("damping must be >= 0")


@dataclass
class MotorState:
    """Spool angles and targets for the two cable motors, radians."""

    flexor_angle: float = 0.0
    extensor_angle: float = 0.0
    flexor_target: float = 0.0
    extensor_target: float = 0.0
    rate_limit: float = 10.0
    travel: float = 2 * math.pi

    def __post_init__(self):
        if self.rate_limit <= 0 or self.travel <= 0:
            raise ValueError("rate limit and travel must be > 0")
        if max(abs(self.flexor_angle), abs(self.extensor_angle)) > self.travel:
            raise ValueError("spool angle outside travel")

    def set_targets(self, flexor: float, extensor: float, rate_limit: float | None = None):
        if rate_limit is not None:
            if rate_limit <= 0:
                raise ValueError("rate limit must be > 0")
            self.rate_limit = rate_limit
        self.flexor_target = min(max(flexor, -self.travel), self.travel)
        self.extensor_target = min(max(extensor, -self.travel), self.travel)

    def advance(self, dt: float):
        limit = self.rate_limit * dt
        for attr, target in (
            ("flexor_angle", self.flexor_target),
            ("extensor_angle", self.extensor_target),
        ):
            cur = getattr(self, attr)
            delta = min(max(target - cur, -limit), limit)
            setattr(self, attr, min(max(cur + delta, -self.travel), self.travel))


@dataclass(frozen=True)
class SensorModel:
    """Absolute magnetic joint encoder: quantization, noise, pipeline delay."""

    resolution_bits: int = 16
    noise_std: float = 2 * (2 * math.pi / 65536)
    latency_samples: int = 1

    def __post_init__(self):
        if self.resolution_bits < 1:
            raise ValueError("resolution_bits must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @property
    def quantization_step(self) -> float:
        return 2 * math.pi / (1 << self.resolution_bits)

    def quantize(self, value: float) -> float:
        step = self.quantization_step
        return round(value / step) * step


@dataclass(frozen=True)
class Perturbation:
    """External joint torques applied over a time window."""

    torques: tuple[float, float, float]
    start: float
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("perturbation duration must be > 0")

    def active_at(self, t: float) -> bool:
        return self.start <= t < self.start + self.duration


def _solve_equilibrium(
    geom: FingerGeometry,
    tendon: TendonConfig,
    skin: SkinModel,
    delta_f: float,
    delta_e: float,
    ext_torque,
) -> np.ndarray:
    """Exact minimizer of the constrained elastic energy.

    Feasible set: lb <= q <= ub, flexor excursion a_f.q >= delta_f,
    extensor excursion -a_e.q >= delta_e. The objective
    0.5 sum k_i q_i^2 - tau.q is strictly convex, so the KKT point is
    unique; every combination of bound states and taut cables is a
    candidate linear system and the first one passing all KKT checks
    is the answer.
    """
    lb = geom.lower_bounds()
    ub = geom.upper_bounds()
    k = np.array(skin.stiffness)
    a_f = np.array(tendon.flexor_arms)
    a_e = np.array(tendon.extensor_arms)
    tau = np.asarray(ext_torque, dtype=float)
    if tau.shape != (3,):
        raise ValueError(f"ext_torque must be a 3-vector, got shape {tau.shape}")
    if not np.all(np.isfinite(tau)):
        raise ValueError("ext_torque must be finite")

    extensor_present = bool(np.any(a_e > 0))

    # taut flexor first: the overwhelmingly common state during motion
    cable_states = [(True, False), (False, False), (True, True), (False, True)]
    bound_states = sorted(itertools.product((0, 1, 2), repeat=3), key=lambda s: sum(x != 0 for x in s))

    for f_taut, e_taut in cable_states:
        if e_taut and not extensor_present:
            continue
        for bounds in bound_states:
            free = [i for i in range(3) if bounds[i] == 0]
            q = np.array([lb[i] if bounds[i] == 1 else ub[i] if bounds[i] == 2 else 0.0 for i in range(3)])
            n = len(free)
            m = int(f_taut) + int(e_taut)
            mat = np.zeros((n + m, n + m))
            rhs = np.zeros(n + m)
            for r, i in enumerate(free):
                mat[r, r] = k[i]
                col = n
                if f_taut:
                    mat[r, col] = -a_f[i]
                    col += 1
                if e_taut:
                    mat[r, col] = a_e[i]
                rhs[r] = tau[i]
            row = n
            if f_taut:
                for c, i in enumerate(free):
                    mat[row, c] = a_f[i]
                rhs[row] = delta_f - sum(a_f[i] * q[i] for i in range(3) if bounds[i] != 0)
                row += 1
            if e_taut:
                for c, i in enumerate(free):
                    mat[row, c] = a_e[i]
                rhs[row] = -delta_e - sum(a_e[i] * q[i] for i in range(3) if bounds[i] != 0)

            if n + m:
                try:
                    sol = np.linalg.solve(mat, rhs)
                except np.linalg.LinAlgError:
                    sol, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
                    if np.linalg.norm(mat @ sol - rhs) > _TOL:
                        continue
            else:
                sol = np.zeros(0)

            for c, i in enumerate(free):
                q[i] = sol[c]
            mu_f = float(sol[n]) if f_taut else 0.0
            mu_e = float(sol[n + int(f_taut)]) if e_taut else 0.0

            # KKT screening
            if any(q[i] < lb[i] - _TOL or q[i] > ub[i] + _TOL for i in free):
                continue
            if mu_f < -_TOL or mu_e < -_TOL:
                continue
            if not f_taut and float(a_f @ q) < delta_f - _TOL:
                continue
            if not e_taut and float(-(a_e @ q)) < delta_e - _TOL:
                continue
            grad = k * q - tau - max(mu_f, 0.0) * a_f + max(mu_e, 0.0) * a_e
            ok = True
            for i in range(3):
                if bounds[i] == 1 and grad[i] < -_TOL:
                    ok = False
                elif bounds[i] == 2 and grad[i] > _TOL:
                    ok = False
            if not ok:
                continue
            return np.clip(q, lb, ub)

    # No candidate satisfied the KKT conditions: the constraint set is
    # empty. Name the cable(s) whose demand the joint box cannot meet.
    flexor_possible = float(a_f @ ub) >= delta_f - _TOL
    extensor_possible = float(-(a_e @ lb)) >= delta_e - _TOL
    if flexor_possible and extensor_possible:
        which = "flexor+extensor"
        detail = (
            f"each cable is satisfiable alone but not jointly: flexor needs {delta_f:.6g} m, "
            f"extensor needs {delta_e:.6g} m"
        )
    elif not flexor_possible and not extensor_possible:
        which = "flexor+extensor"
        detail = (
            f"flexor needs {delta_f:.6g} m (max {float(a_f @ ub):.6g}), "
            f"extensor needs {delta_e:.6g} m (max {float(-(a_e @ lb)):.6g})"
        )
    elif not flexor_possible:
        which = "flexor"
        detail = (
            f"flexor displacement {delta_f:.6g} m exceeds the {float(a_f @ ub):.6g} m "
            f"of cable the joint limits can take up"
        )
    else:
        which = "extensor"
        detail = (
            f"extensor displacement {delta_e:.6g} m exceeds the {float(-(a_e @ lb)):.6g} m "
            f"of cable the joint limits can release"
        )
    raise OverConstrainedError(which, detail)


def equilibrium(
    geom: FingerGeometry,
    q_seed: JointAngles,
    tendon: TendonConfig,
    skin: SkinModel,
    cable_displacements: tuple[float, float],
    ext_torque=(0.0, 0.0, 0.0),
) -> JointAngles:
    """Static pose under the given cable displacements and torques.

    q_seed is advisory only; the solver is exact and ignores it beyond
    validation. Raises OverConstrainedError when the displacement pair
    cannot be met inside the joint limits.
    """
    del q_seed
    delta_f, delta_e = cable_displacements
    q = _solve_equilibrium(geom, tendon, skin, float(delta_f), float(delta_e), ext_torque)
    return JointAngles.from_array(q)


def motor_targets_for_joints(tendon: TendonConfig, q_target: JointAngles) -> tuple[float, float]:
    """Spool angles that make q_target the equilibrium excursion.

    The flexor takes up exactly the cable freed by flexing to the
    target; the extensor pays out its own share so it neither blocks
    the motion nor goes needlessly slack.
    """
    t = q_target.as_array()
    delta_f = float(np.dot(tendon.flexor_arms, t))
    delta_e = -float(np.dot(tendon.extensor_arms, t))
    return delta_f / tendon.spool_radius, delta_e / tendon.spool_radius


@dataclass
class SimulationState:
    """Everything one finger plant owns; exactly one node drives it."""

    geom: FingerGeometry
    tendon: TendonConfig = field(default_factory=TendonConfig)
    skin: SkinModel = field(default_factory=SkinModel)
    sensor: SensorModel = field(default_factory=SensorModel)
    motor: MotorState = field(default_factory=MotorState)
    q: JointAngles = JointAngles(0.0, 0.0, 0.0)
    time: float = 0.0
    perturbations: list[Perturbation] = field(default_factory=list)

    def __post_init__(self):
        # one-deep sensor pipeline: reads return the previous capture
        self._pipeline = self.q

    @classmethod
    def from_params(cls, geom: FingerGeometry, params: FingerParams) -> "SimulationState":
        return cls(
            geom=geom,
            tendon=TendonConfig(params.flexor_arms, params.extensor_arms, params.spool_radius),
            skin=SkinModel(params.stiffness, params.damping),
            sensor=SensorModel(params.resolution_bits, params.noise_std),
            motor=MotorState(rate_limit=params.motor_rate_limit, travel=params.motor_travel),
        )

    def add_perturbation(self, p: Perturbation):
        self.perturbations.append(p)

    def cable_displacements(self) -> tuple[float, float]:
        r = self.tendon.spool_radius
        return r * self.motor.flexor_angle, r * self.motor.extensor_angle


def step(state: SimulationState, dt: float) -> SimulationState:
    """Advance one quasi-static step of length dt."""
    if not 0 < dt <= MAX_STEP_DT:
        raise ValueError(f"dt must be in (0, {MAX_STEP_DT}], got {dt}")
    state.motor.advance(dt)
    delta_f, delta_e = state.cable_displacements()
    tau = np.zeros(3)
    for p in state.perturbations:
        if p.active_at(state.time):
            tau += np.asarray(p.torques, dtype=float)
    q_eq = _solve_equilibrium(state.geom, state.tendon, state.skin, delta_f, delta_e, tau)
    if any(d > 0 for d in state.skin.damping):
        # optional first-order smoothing toward the equilibrium; the
        # fixed point is q_eq, so statics are unaffected
        cur = state.q.as_array()
        out = q_eq.copy()
        for i, d in enumerate(state.skin.damping):
            if d > 0:
                decay = math.exp(-dt * state.skin.stiffness[i] / d)
                out[i] = q_eq[i] + (cur[i] - q_eq[i]) * decay
        state.q = JointAngles.from_array(out)
    else:
        state.q = JointAngles.from_array(q_eq)
    state.time += dt
    return state


def read_sensors(state: SimulationState, rng_seed) -> tuple[JointAngles, MotorState]:
    """Sample the joint encoders and snapshot the motors.

    Encoder values lag one sample: the returned angles are the plant
    pose at the previous read. Noise and quantization are applied per
    read, reproducibly for a given rng_seed.
    """
    raw = state._pipeline.as_array()
    if state.sensor.noise_std > 0:
        rng = np.random.default_rng(rng_seed)
        raw = raw + rng.normal(0.0, state.sensor.noise_std, size=3)
    quantized = JointAngles(*(state.sensor.quantize(float(v)) for v in raw))
    state._pipeline = state.q
    return quantized, replace(state.motor)


def fingertip_force_to_torques(geom: FingerGeometry, q: JointAngles, force: PlanarPoint) -> np.ndarray:
    """Joint torques statically equivalent to a planar tip force."""
    return jacobian(geom, q).T @ np.array([force.x, force.y])
