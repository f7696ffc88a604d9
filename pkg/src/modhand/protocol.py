"""Binary wire framing between the coordinator and finger nodes.

Frame layout, all integers little-endian:

    offset  size  field
    0       2     magic 0x48 0x46
    2       1     version (currently 1)
    3       1     msg_type
    4       1     finger_id
    5       4     seq, unsigned
    9       8     timestamp_us, unsigned
    17      2     payload_len, unsigned (max 1024)
    19      n     payload
    19+n    4     crc32 (IEEE) over bytes [0, 19+n)

Angles travel as signed microradians so frames are bit-exact across
languages; every angle field must stay within one full turn. encode and
decode are pure; StreamDecoder instances belong to one connection each.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum

from modhand.errors import EncodeError

MAGIC = b"\x48\x46"
VERSION = 1
HEADER_SIZE = 19
CRC_SIZE = 4
MAX_PAYLOAD = 1024
TWO_PI_URAD = 6283185

FINGER_KINDS = {"thumb": 0, "index": 1, "middle": 2, "ring": 3, "little": 4, "generic": 5}
KIND_NAMES = {v: k for k, v in FINGER_KINDS.items()}

ERR_WRONG_FINGER = 1
ERR_BAD_COMMAND = 2
ERR_INTERNAL = 3


class MsgType(IntEnum):
    HELLO = 1
    POSE_TELEMETRY = 2
    MOTOR_TELEMETRY = 3
    SET_MOTOR_TARGETS = 4
    SET_JOINT_TARGETS = 5
    TOUCH_EVENT = 6
    HEARTBEAT = 7
    ERROR = 8


def rad_to_urad(angle: float) -> int:
    return int(round(angle * 1e6))


def urad_to_rad(urad: int) -> float:
    return urad / 1e6


@dataclass(frozen=True)
class Hello:
    kind: int
    geometry_hash: int


@dataclass(frozen=True)
class PoseTelemetry:
    joints_urad: tuple[int, int, int]


@dataclass(frozen=True)
class MotorTelemetry:
    spools_urad: tuple[int, int]


@dataclass(frozen=True)
class SetMotorTargets:
    spools_urad: tuple[int, int]
    rate_urad_s: int


@dataclass(frozen=True)
class SetJointTargets:
    joints_urad: tuple[int, int, int]


@dataclass(frozen=True)
class TouchEvent:
    magnitude_urad: int
    joint: int


@dataclass(frozen=True)
class Heartbeat:
    pass


@dataclass(frozen=True)
class ErrorReport:
    code: int
    text: str


Message = (
    Hello
    | PoseTelemetry
    | MotorTelemetry
    | SetMotorTargets
    | SetJointTargets
    | TouchEvent
    | Heartbeat
    | ErrorReport
)

_TYPE_OF = {
    Hello: MsgType.HELLO,
    PoseTelemetry: MsgType.POSE_TELEMETRY,
    MotorTelemetry: MsgType.MOTOR_TELEMETRY,
    SetMotorTargets: MsgType.SET_MOTOR_TARGETS,
    SetJointTargets: MsgType.SET_JOINT_TARGETS,
    TouchEvent: MsgType.TOUCH_EVENT,
    Heartbeat: MsgType.HEARTBEAT,
    ErrorReport: MsgType.ERROR,
}


@dataclass(frozen=True)
class FrameHeader:
    version: int
    msg_type: int
    finger_id: int
    seq: int
    timestamp_us: int
    payload_len: int


@dataclass(frozen=True)
class DecodedMessage:
    header: FrameHeader
    message: Message


@dataclass(frozen=True)
class DecodeError:
    """A non-frame outcome; kind is one of resync, incomplete, crc,
    version, unknown_type, payload."""

    kind: str
    offset: int = 0
    needed: int = 0
    detail: str = ""
    raw: bytes = field(default=b"", repr=False)


def _check_angle(name: str, value: int, exc):
    if not isinstance(value, int):
        raise exc(f"{name} must be an integer microradian value, got {type(value).__name__}")
    if abs(value) > TWO_PI_URAD:
        raise exc(f"{name} = {value} urad exceeds one full turn ({TWO_PI_URAD})")


def _check_uint(name: str, value: int, bits: int, exc):
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise exc(f"{name} must fit in {bits} unsigned bits, got {value!r}")


def _encode_payload(msg: Message) -> bytes:
    if isinstance(msg, Hello):
        _check_uint("kind", msg.kind, 8, EncodeError)
        _check_uint("geometry_hash", msg.geometry_hash, 64, EncodeError)
        return struct.pack("<BQ", msg.kind, msg.geometry_hash)
    if isinstance(msg, PoseTelemetry):
        if len(msg.joints_urad) != 3:
            raise EncodeError("pose telemetry needs 3 joint angles")
        for i, v in enumerate(msg.joints_urad):
            _check_angle(f"joint{i + 1}", v, EncodeError)
        return struct.pack("<3i", *msg.joints_urad)
    if isinstance(msg, MotorTelemetry):
        if len(msg.spools_urad) != 2:
            raise EncodeError("motor telemetry needs 2 spool angles")
        for i, v in enumerate(msg.spools_urad):
            _check_angle(f"spool{i + 1}", v, EncodeError)
        return struct.pack("<2i", *msg.spools_urad)
    if isinstance(msg, SetMotorTargets):
        if len(msg.spools_urad) != 2:
            raise EncodeError("motor targets need 2 spool angles")
        for i, v in enumerate(msg.spools_urad):
            _check_angle(f"spool{i + 1}", v, EncodeError)
        _check_uint("rate_urad_s", msg.rate_urad_s, 32, EncodeError)
        return struct.pack("<2iI", *msg.spools_urad, msg.rate_urad_s)
    if isinstance(msg, SetJointTargets):
        if len(msg.joints_urad) != 3:
            raise EncodeError("joint targets need 3 angles")
        for i, v in enumerate(msg.joints_urad):
            _check_angle(f"joint{i + 1}", v, EncodeError)
        return struct.pack("<3i", *msg.joints_urad)
    if isinstance(msg, TouchEvent):
        if not isinstance(msg.magnitude_urad, int) or not 0 <= msg.magnitude_urad <= TWO_PI_URAD:
            raise EncodeError(f"touch magnitude must be 0..{TWO_PI_URAD} urad, got {msg.magnitude_urad!r}")
        if msg.joint not in (0, 1, 2):
            raise EncodeError(f"touch joint index must be 0..2, got {msg.joint!r}")
        return struct.pack("<IB", msg.magnitude_urad, msg.joint)
    if isinstance(msg, Heartbeat):
        return b""
    if isinstance(msg, ErrorReport):
        _check_uint("code", msg.code, 16, EncodeError)
        text = msg.text.encode("utf-8")
        if 2 + len(text) > MAX_PAYLOAD:
            raise EncodeError(f"error text of {len(text)} bytes exceeds payload budget")
        return struct.pack("<H", msg.code) + text
    raise EncodeError(f"unsupported message {type(msg).__name__}")


def encode(msg: Message, finger_id: int, seq: int, timestamp_us: int) -> bytes:
    """Serialize one message into a complete frame."""
    _check_uint("finger_id", finger_id, 8, EncodeError)
    _check_uint("seq", seq, 32, EncodeError)
    _check_uint("timestamp_us", timestamp_us, 64, EncodeError)
    payload = _encode_payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise EncodeError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    body = (
        MAGIC
        + struct.pack("<BBB", VERSION, int(_TYPE_OF[type(msg)]), finger_id)
        + struct.pack("<IQH", seq, timestamp_us, len(payload))
        + payload
    )
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _PayloadError(Exception):
    pass


def _decode_payload(msg_type: int, payload: bytes) -> Message:
    if msg_type == MsgType.HELLO:
        if len(payload) != 9:
            raise _PayloadError(f"hello payload must be 9 bytes, got {len(payload)}")
        kind, geo = struct.unpack("<BQ", payload)
        return Hello(kind, geo)
    if msg_type == MsgType.POSE_TELEMETRY:
        if len(payload) != 12:
            raise _PayloadError(f"pose payload must be 12 bytes, got {len(payload)}")
        joints = struct.unpack("<3i", payload)
        for i, v in enumerate(joints):
            _check_angle(f"joint{i + 1}", v, _PayloadError)
        return PoseTelemetry(joints)
    if msg_type == MsgType.MOTOR_TELEMETRY:
        if len(payload) != 8:
            raise _PayloadError(f"motor payload must be 8 bytes, got {len(payload)}")
        spools = struct.unpack("<2i", payload)
        for i, v in enumerate(spools):
            _check_angle(f"spool{i + 1}", v, _PayloadError)
        return MotorTelemetry(spools)
    if msg_type == MsgType.SET_MOTOR_TARGETS:
        if len(payload) != 12:
            raise _PayloadError(f"motor target payload must be 12 bytes, got {len(payload)}")
        s0, s1, rate = struct.unpack("<2iI", payload)
        for i, v in enumerate((s0, s1)):
            _check_angle(f"spool{i + 1}", v, _PayloadError)
        return SetMotorTargets((s0, s1), rate)
    if msg_type == MsgType.SET_JOINT_TARGETS:
        if len(payload) != 12:
            raise _PayloadError(f"joint target payload must be 12 bytes, got {len(payload)}")
        joints = struct.unpack("<3i", payload)
        for i, v in enumerate(joints):
            _check_angle(f"joint{i + 1}", v, _PayloadError)
        return SetJointTargets(joints)
    if msg_type == MsgType.TOUCH_EVENT:
        if len(payload) != 5:
            raise _PayloadError(f"touch payload must be 5 bytes, got {len(payload)}")
        magnitude, joint = struct.unpack("<IB", payload)
        if magnitude > TWO_PI_URAD:
            raise _PayloadError(f"touch magnitude {magnitude} urad exceeds one full turn")
        if joint > 2:
            raise _PayloadError(f"touch joint index {joint} out of range")
        return TouchEvent(magnitude, joint)
    if msg_type == MsgType.HEARTBEAT:
        if payload:
            raise _PayloadError(f"heartbeat payload must be empty, got {len(payload)} bytes")
        return Heartbeat()
    if msg_type == MsgType.ERROR:
        if len(payload) < 2:
            raise _PayloadError(f"error payload must be at least 2 bytes, got {len(payload)}")
        (code,) = struct.unpack("<H", payload[:2])
        try:
            text = payload[2:].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise _PayloadError(f"error text is not valid UTF-8: {exc}") from None
        return ErrorReport(code, text)
    raise _PayloadError(f"unknown msg_type {msg_type}")


def _parse_at(data: bytes, start: int) -> DecodedMessage | DecodeError:
    """Parse one frame candidate beginning with MAGIC at start."""
    avail = len(data) - start
    if avail < HEADER_SIZE:
        return DecodeError("incomplete", offset=start, needed=HEADER_SIZE - avail)
    (plen,) = struct.unpack_from("<H", data, start + 17)
    if plen > MAX_PAYLOAD:
        return DecodeError(
            "resync", offset=start, detail=f"payload_len {plen} exceeds {MAX_PAYLOAD}"
        )
    total = HEADER_SIZE + plen + CRC_SIZE
    if avail < total:
        return DecodeError("incomplete", offset=start, needed=total - avail)
    frame = bytes(data[start : start + total])
    (stored,) = struct.unpack_from("<I", frame, total - CRC_SIZE)
    computed = zlib.crc32(frame[: total - CRC_SIZE]) & 0xFFFFFFFF
    if stored != computed:
        return DecodeError(
            "crc",
            offset=start,
            detail=f"crc stored {stored:#010x} != computed {computed:#010x}",
        )
    version, msg_type, finger_id = struct.unpack_from("<BBB", frame, 2)
    seq, timestamp_us, _ = struct.unpack_from("<IQH", frame, 5)
    header = FrameHeader(version, msg_type, finger_id, seq, timestamp_us, plen)
    if version != VERSION:
        return DecodeError(
            "version", offset=start, detail=f"version {version} unsupported", raw=frame
        )
    try:
        msg = _decode_payload(msg_type, frame[HEADER_SIZE : HEADER_SIZE + plen])
    except _PayloadError as exc:
        kind = "unknown_type" if str(exc).startswith("unknown msg_type") else "payload"
        return DecodeError(kind, offset=start, detail=str(exc), raw=frame)
    return DecodedMessage(header, msg)


def decode(data: bytes) -> DecodedMessage | DecodeError:
    """Decode the first frame found in data. Never raises.

    Garbage before the first magic is skipped; with no magic at all the
    result is a resync report. Truncation reports how many bytes would
    complete the frame.
    """
    idx = data.find(MAGIC)
    if idx < 0:
        return DecodeError("resync", offset=len(data), detail="no frame start found")
    return _parse_at(data, idx)


def frame_size(payload_len: int) -> int:
    return HEADER_SIZE + payload_len + CRC_SIZE


class StreamDecoder:
    """Incremental decoder for one byte stream.

    feed() returns the events newly completed by the added bytes:
    DecodedMessage for each valid frame, DecodeError for corruption.
    After a bad candidate the scan resumes just past its magic, so
    frames hiding inside garbage spans are still recovered. flush()
    drains what remains at end of stream the same way.
    """

    def __init__(self):
        self._buf = bytearray()
        self._base = 0  # absolute stream offset of _buf[0]

    def pending(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list[DecodedMessage | DecodeError]:
        self._buf += data
        return self._drain(eof=False)

    def flush(self) -> list[DecodedMessage | DecodeError]:
        return self._drain(eof=True)

    def _skip(self, count: int):
        del self._buf[:count]
        self._base += count

    def _drain(self, eof: bool) -> list[DecodedMessage | DecodeError]:
        events: list[DecodedMessage | DecodeError] = []
        while True:
            idx = self._buf.find(MAGIC)
            if idx < 0:
                # keep a trailing first-magic-byte: its partner may be
                # in the next chunk
                keep = 0 if eof else (1 if self._buf[-1:] == MAGIC[:1] else 0)
                drop = len(self._buf) - keep
                if drop:
                    events.append(
                        DecodeError("resync", offset=self._base, detail=f"skipped {drop} bytes")
                    )
                    self._skip(drop)
                return events
            if idx > 0:
                events.append(
                    DecodeError("resync", offset=self._base, detail=f"skipped {idx} bytes")
                )
                self._skip(idx)
            result = _parse_at(self._buf, 0)
            if isinstance(result, DecodedMessage):
                events.append(result)
                self._skip(frame_size(result.header.payload_len))
                continue
            if result.kind == "incomplete":
                if not eof:
                    return events
                # the stream is over, this candidate can never finish;
                # report it and rescan inside its span
                events.append(
                    DecodeError("incomplete", offset=self._base, needed=result.needed)
                )
                self._skip(len(MAGIC))
                continue
            if result.kind in ("crc", "resync"):
                # framing untrusted: a real frame may start inside the
                # claimed span, so advance only past the magic
                events.append(
                    DecodeError(result.kind, offset=self._base, detail=result.detail)
                )
                self._skip(len(MAGIC))
                continue
            # crc-valid frame with unusable content: skip it whole
            events.append(
                DecodeError(result.kind, offset=self._base, detail=result.detail, raw=result.raw)
            )
            self._skip(len(result.raw))
