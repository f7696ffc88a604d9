"""Plain-text key-value config files and packaged presets.

One format serves geometry presets, finger parameter sets, hand
configurations, grasp presets, and run manifests:

    # comment
    key = value
    key = value           # repeated keys accumulate, order preserved

Values are unquoted strings; numeric fields are parsed where they are
consumed so errors can name the file and line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from modhand.errors import ConfigError
from modhand.kinematics import FingerGeometry, JointAngles

ROLES = ("thumb", "index", "middle", "ring", "little", "generic")


@dataclass
class KvEntry:
    key: str
    value: str
    line: int


class KvFile:
    """Parsed key-value file with line numbers for diagnostics."""

    def __init__(self, entries: list[KvEntry], origin: str):
        self.entries = entries
        self.origin = origin

    def get(self, key: str, default: str | None = None) -> str | None:
        for e in self.entries:
            if e.key == key:
                return e.value
        return default

    def get_float(self, key: str, default: float | None = None) -> float:
        raw = self.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"{self.origin}: missing required key '{key}'")
            return default
        entry = next(e for e in self.entries if e.key == key)
        return parse_float(raw, self.origin, entry.line, key)

    def get_all(self, key: str) -> list[KvEntry]:
        return [e for e in self.entries if e.key == key]

    def fail(self, line: int, message: str):
        raise ConfigError(f"{self.origin}:{line}: {message}")


def parse_float(raw: str, origin: str, line: int, key: str) -> float:
    try:
        val = float(raw)
    except ValueError:
        raise ConfigError(f"{origin}:{line}: key '{key}' is not a number: {raw!r}") from None
    if not math.isfinite(val):
        raise ConfigError(f"{origin}:{line}: key '{key}' must be finite, got {raw!r}")
    return val


def parse_kv(text: str, origin: str) -> KvFile:
    entries = []
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {rawline.rstrip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        entries.append(KvEntry(key, value, lineno))
    return KvFile(entries, origin)


def load_kv(path: str | Path) -> KvFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc}") from None
    return parse_kv(text, str(path))


def _preset_text(category: str, name: str) -> str:
    if not name.replace("_", "").isalnum():
        raise ConfigError(f"invalid preset name {name!r}")
    ref = resources.files("modhand") / "presets" / category / f"{name}.cfg"
    try:
        return ref.read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown {category} preset {name!r}") from None


def preset_names(category: str) -> list[str]:
    ref = resources.files("modhand") / "presets" / category
    return sorted(p.name[:-4] for p in ref.iterdir() if p.name.endswith(".cfg"))


# -- Geometry -----------------------------------------------------------------


def geometry_from_kv(kv: KvFile) -> FingerGeometry:
    lengths = [kv.get_float(k) for k in ("l0", "l1", "l2", "l3")]
    limits = []
    for i in (1, 2, 3):
        limits.append((kv.get_float(f"theta{i}_min"), kv.get_float(f"theta{i}_max")))
    try:
        return FingerGeometry(*lengths, joint_limits=tuple(limits))
    except ValueError as exc:
        raise ConfigError(f"{kv.origin}: {exc}") from None


def load_geometry(path: str | Path) -> FingerGeometry:
    return geometry_from_kv(load_kv(path))


def geometry_preset(name: str) -> FingerGeometry:
    return geometry_from_kv(parse_kv(_preset_text("geometry", name), f"geometry:{name}"))


# -- Finger simulation parameters ---------------------------------------------


@dataclass(frozen=True)
class FingerParams:
    """Tendon, skin, sensor, and motor constants for one finger."""

    flexor_arms: tuple[float, float, float] = (0.004, 0.004, 0.004)
    extensor_arms: tuple[float, float, float] = (0.0, 0.0, 0.005)
    spool_radius: float = 0.005
    stiffness: tuple[float, float, float] = (0.10, 0.12, 0.15)
    damping: tuple[float, float, float] = (0.0, 0.0, 0.0)
    resolution_bits: int = 16
    noise_std: float = 2 * (2 * math.pi / 65536)
    motor_rate_limit: float = 10.0
    motor_travel: float = 2 * math.pi

    def __post_init__(self):
        if any(a < 0 for a in self.flexor_arms + self.extensor_arms):
            raise ValueError("moment arms must be >= 0")
        if any(a <= 0 for a in self.flexor_arms):
            raise ValueError("flexor moment arms must be > 0 at every joint")
        if any(k <= 0 for k in self.stiffness):
            raise ValueError("joint stiffnesses must be > 0")
        if self.spool_radius <= 0:
            raise ValueError("spool radius must be > 0")
        if self.motor_rate_limit <= 0 or self.motor_travel <= 0:
            raise ValueError("motor rate limit and travel must be > 0")


def params_from_kv(kv: KvFile) -> FingerParams:
    d = FingerParams()
    try:
        return FingerParams(
            flexor_arms=tuple(kv.get_float(f"flexor_arm{i}", d.flexor_arms[i - 1]) for i in (1, 2, 3)),
            extensor_arms=tuple(kv.get_float(f"extensor_arm{i}", d.extensor_arms[i - 1]) for i in (1, 2, 3)),
            spool_radius=kv.get_float("spool_radius", d.spool_radius),
            stiffness=tuple(kv.get_float(f"k{i}", d.stiffness[i - 1]) for i in (1, 2, 3)),
            damping=tuple(kv.get_float(f"d{i}", d.damping[i - 1]) for i in (1, 2, 3)),
            resolution_bits=int(kv.get_float("resolution_bits", d.resolution_bits)),
            noise_std=kv.get_float("noise_std", d.noise_std),
            motor_rate_limit=kv.get_float("motor_rate_limit", d.motor_rate_limit),
            motor_travel=kv.get_float("motor_travel", d.motor_travel),
        )
    except ValueError as exc:
        raise ConfigError(f"{kv.origin}: {exc}") from None


def load_params(path: str | Path) -> FingerParams:
    return params_from_kv(load_kv(path))


def params_preset(name: str = "default") -> FingerParams:
    return params_from_kv(parse_kv(_preset_text("params", name), f"params:{name}"))


# -- Hand configuration ---------------------------------------------------------


@dataclass(frozen=True)
class FingerMount:
    finger_id: int
    role: str
    x: float
    y: float
    yaw: float
    geometry_preset: str


@dataclass(frozen=True)
class HandConfiguration:
    """Set of finger modules with planar mounting poses and roles."""

    fingers: tuple[FingerMount, ...]
    name: str = "hand"

    def __post_init__(self):
        if not self.fingers:
            raise ValueError("hand configuration needs at least one finger")
        ids = [f.finger_id for f in self.fingers]
        if len(set(ids)) != len(ids):
            raise ValueError("finger ids must be unique")
        roles = [f.role for f in self.fingers if f.role != "generic"]
        if len(set(roles)) != len(roles):
            raise ValueError("assigned roles must be unique")

    def by_role(self, role: str) -> FingerMount | None:
        for f in self.fingers:
            if f.role == role:
                return f
        return None

    def by_id(self, finger_id: int) -> FingerMount | None:
        for f in self.fingers:
            if f.finger_id == finger_id:
                return f
        return None

    @property
    def roles(self) -> set[str]:
        return {f.role for f in self.fingers}


def hand_from_kv(kv: KvFile) -> HandConfiguration:
    mounts = []
    for entry in kv.get_all("finger"):
        parts = entry.value.split()
        if len(parts) != 6:
            kv.fail(entry.line, "finger entry needs: <id> <role> <x> <y> <yaw> <geometry_preset>")
        fid_raw, role, xs, ys, yaws, preset = parts
        try:
            fid = int(fid_raw)
        except ValueError:
            kv.fail(entry.line, f"finger id is not an integer: {fid_raw!r}")
        if role not in ROLES:
            kv.fail(entry.line, f"unknown role {role!r}; expected one of {', '.join(ROLES)}")
        x = parse_float(xs, kv.origin, entry.line, "x")
        y = parse_float(ys, kv.origin, entry.line, "y")
        yaw = parse_float(yaws, kv.origin, entry.line, "yaw")
        mounts.append(FingerMount(fid, role, x, y, yaw, preset))
    if not mounts:
        raise ConfigError(f"{kv.origin}: no 'finger' entries")
    name = kv.get("name", "hand")
    try:
        return HandConfiguration(tuple(mounts), name=name)
    except ValueError as exc:
        raise ConfigError(f"{kv.origin}: {exc}") from None


def load_hand(path: str | Path) -> HandConfiguration:
    return hand_from_kv(load_kv(path))


def hand_preset(name: str) -> HandConfiguration:
    return hand_from_kv(parse_kv(_preset_text("hands", name), f"hands:{name}"))


def hand_to_text(hand: HandConfiguration) -> str:
    lines = [f"name = {hand.name}"]
    for f in hand.fingers:
        lines.append(
            f"finger = {f.finger_id} {f.role} {f.x!r} {f.y!r} {f.yaw!r} {f.geometry_preset}"
        )
    return "\n".join(lines) + "\n"


# -- Grasp presets ---------------------------------------------------------------


@dataclass(frozen=True)
class GraspSpec:
    """Named per-role joint targets with phase timing."""

    name: str
    targets: dict[str, JointAngles]
    required_roles: tuple[str, ...]
    preshape_s: float = 0.4
    close_s: float = 0.8
    hold_s: float = 0.4

    def __post_init__(self):
        if min(self.preshape_s, self.close_s, self.hold_s) < 0:
            raise ValueError("phase durations must be >= 0")
        for role in self.required_roles:
            if role not in self.targets:
                raise ValueError(f"required role {role!r} has no target")

    @property
    def budget_s(self) -> float:
        return self.preshape_s + self.close_s + self.hold_s


def grasp_from_kv(kv: KvFile, name: str) -> GraspSpec:
    targets = {}
    for entry in kv.get_all("target"):
        parts = entry.value.split()
        if len(parts) != 4:
            kv.fail(entry.line, "target entry needs: <role> <theta1> <theta2> <theta3>")
        role = parts[0]
        if role not in ROLES:
            kv.fail(entry.line, f"unknown role {role!r}")
        angles = [parse_float(p, kv.origin, entry.line, "target") for p in parts[1:]]
        targets[role] = JointAngles(*angles)
    requires_raw = kv.get("requires", "")
    required = tuple(requires_raw.split()) if requires_raw else ()
    for role in required:
        if role not in ROLES:
            raise ConfigError(f"{kv.origin}: unknown required role {role!r}")
    try:
        return GraspSpec(
            name=name,
            targets=targets,
            required_roles=required,
            preshape_s=kv.get_float("phase_preshape", 0.4),
            close_s=kv.get_float("phase_close", 0.8),
            hold_s=kv.get_float("phase_hold", 0.4),
        )
    except ValueError as exc:
        raise ConfigError(f"{kv.origin}: {exc}") from None


def load_grasp(path: str | Path) -> GraspSpec:
    path = Path(path)
    return grasp_from_kv(load_kv(path), path.stem)


def grasp_preset(name: str) -> GraspSpec:
    return grasp_from_kv(parse_kv(_preset_text("grasps", name), f"grasps:{name}"), name)
